#pragma once

#include <cstdint>
#include <queue>
#include <string>
#include <vector>

#include "cortex/errors.hpp"

namespace cortex {

enum class EventKind { Arrival, PrefillDone, CallComplete, ToolComplete, AutoscaleTick, BorrowCheck, KvSample };

struct Event {
    double time = 0.0;
    std::uint64_t seq = 0;
    EventKind kind = EventKind::Arrival;
    std::size_t target = 0;   // engine or pool
    std::uint64_t token = 0;  // request id or engine version
};

/// Min-queue on (time, seq). seq is assigned at scheduling, so events at the
/// same instant run in the order they were scheduled.
class EventQueue {
public:
    const Event& push(double time, EventKind kind, std::size_t target = 0, std::uint64_t token = 0) {
        if (time < now_) {
            throw InvariantViolation("event scheduled at " + std::to_string(time) + " before clock " +
                                     std::to_string(now_));
        }
        heap_.push(Event{time, next_seq_++, kind, target, token});
        return heap_.top();
    }

    bool empty() const { return heap_.empty(); }
    const Event& top() const { return heap_.top(); }

    Event pop() {
        Event e = heap_.top();
        heap_.pop();
        if (e.time < now_) throw InvariantViolation("clock moved backwards");
        now_ = e.time;
        return e;
    }

    double now() const { return now_; }

private:
    struct Later {
        bool operator()(const Event& a, const Event& b) const {
            return a.time != b.time ? a.time > b.time : a.seq > b.seq;
        }
    };
    std::priority_queue<Event, std::vector<Event>, Later> heap_;
    std::uint64_t next_seq_ = 0;
    double now_ = 0.0;
};

}  // namespace cortex
