#include <doctest.h>

#include <cortex/engine.hpp>
#include <cortex/errors.hpp>

#include "helpers.hpp"

using namespace cortex;

namespace {

StageSpec stage_with_prefix(std::int64_t prefix) {
    auto s = testing::llm("gen", prefix, {testing::edge("ok", 1.0, "Success")});
    return s;
}

EngineState engine(std::int64_t capacity = 100000, double t0 = 0.05, double alpha = 0.2, int max_batch = 8) {
    EngineState e;
    e.params.kv_capacity_tokens = capacity;
    e.params.base_token_time = t0;
    e.params.batch_slope = alpha;
    e.params.max_batch = max_batch;
    e.params.prefill_rate = 1000.0;
    return e;
}

void make_warm(EngineState& e, StageIndex stage, std::int64_t tokens) {
    e.resident_prefixes.push_back({stage, tokens, 0.0});
    e.kv_used_tokens = recompute_kv_used(e);
}

// Admits and moves straight to decode.
void start_decoding(EngineState& e, std::uint64_t id, std::int64_t output, StageIndex stage = 0) {
    const auto s = stage_with_prefix(0);
    admit(e, LlmCall{id, stage, 0, output}, s, 0.0);
    begin_decode(e, id);
}

}  // namespace

TEST_CASE("kv_demand") {
    auto e = engine();
    const auto s = stage_with_prefix(1000);
    CHECK(kv_demand({1, 0, 100, 50}, e, s) == 1150);
    make_warm(e, 0, 1000);
    CHECK(kv_demand({1, 0, 100, 50}, e, s) == 150);
    CHECK(kv_demand({1, 0, 0, 0}, e, s) == 0);
}

TEST_CASE("can_admit respects capacity and batch size") {
    const auto s = stage_with_prefix(0);
    SUBCASE("used 4000 of 4096, demand 150") {
        auto e = engine(4096);
        make_warm(e, 1, 4000);
        CHECK_FALSE(can_admit(e, {1, 0, 100, 50}, s));
    }
    SUBCASE("empty engine") {
        auto e = engine(4096);
        CHECK(can_admit(e, {1, 0, 100, 50}, s));
    }
    SUBCASE("full batch") {
        auto e = engine(100000, 0.05, 0.2, 8);
        for (std::uint64_t i = 0; i < 8; ++i) admit(e, {i, 0, 10, 10}, s, 0.0);
        CHECK_FALSE(can_admit(e, {99, 0, 10, 10}, s));
    }
    SUBCASE("committed output counts against capacity") {
        auto e = engine(1000);
        admit(e, {1, 0, 100, 800}, s, 0.0);
        CHECK(e.kv_used_tokens == 100);
        CHECK_FALSE(can_admit(e, {2, 0, 50, 60}, s));
    }
}

TEST_CASE("admit computes prefill completion") {
    SUBCASE("warm, 200 prompt tokens at 1000/s") {
        auto e = engine();
        make_warm(e, 0, 800);
        CHECK(admit(e, {1, 0, 200, 10}, stage_with_prefix(800), 3.0) == doctest::Approx(3.2));
    }
    SUBCASE("cold prefix is prefilled too") {
        auto e = engine();
        CHECK(admit(e, {1, 0, 200, 10}, stage_with_prefix(800), 3.0) == doctest::Approx(4.0));
        CHECK(e.has_prefix(0));
        CHECK(e.kv_used_tokens == 1000);
    }
    SUBCASE("zero prompt, warm") {
        auto e = engine();
        make_warm(e, 0, 800);
        CHECK(admit(e, {1, 0, 0, 10}, stage_with_prefix(800), 3.0) == 3.0);
    }
    SUBCASE("without capacity") {
        auto e = engine(100);
        CHECK_THROWS_AS(admit(e, {1, 0, 200, 10}, stage_with_prefix(0), 0.0), AdmitWithoutCapacity);
    }
}

TEST_CASE("advance_decode emits tokens at 1/t(b)") {
    SUBCASE("b=1, t0=0.05, alpha=0.2, 5s") {
        auto e = engine();
        start_decoding(e, 1, 1000);
        advance_decode(e, 0.0, 5.0);
        CHECK(e.active_batch[0].tokens_emitted == doctest::Approx(100.0));
        CHECK(e.kv_used_tokens == 100);
    }
    SUBCASE("b=2, 6s gives 100 each since t(2)=0.06") {
        auto e = engine();
        start_decoding(e, 1, 1000);
        start_decoding(e, 2, 1000);
        CHECK(e.params.token_time(2) == doctest::Approx(0.06));
        advance_decode(e, 0.0, 6.0);
        for (const auto& c : e.active_batch) CHECK(c.tokens_emitted == doctest::Approx(100.0));
        CHECK(e.kv_used_tokens == 200);
    }
    SUBCASE("zero interval") {
        auto e = engine();
        start_decoding(e, 1, 1000);
        advance_decode(e, 2.0, 2.0);
        CHECK(e.active_batch[0].tokens_emitted == 0.0);
    }
}

TEST_CASE("advance_decode is additive over segments") {
    for (double split : {0.001, 0.37, 1.0, 2.5, 3.999}) {
        auto whole = engine();
        auto parts = engine();
        for (auto* e : {&whole, &parts}) {
            start_decoding(*e, 1, 5000);
            start_decoding(*e, 2, 5000);
            start_decoding(*e, 3, 5000);
        }
        advance_decode(whole, 0.0, 4.0);
        advance_decode(parts, 0.0, split);
        advance_decode(parts, split, 4.0);
        for (std::size_t i = 0; i < 3; ++i) {
            CHECK(parts.active_batch[i].tokens_emitted ==
                  doctest::Approx(whole.active_batch[i].tokens_emitted).epsilon(1e-12));
        }
        CHECK(parts.kv_used_tokens == whole.kv_used_tokens);
    }
}

TEST_CASE("prefill calls do not decode or count toward batch size") {
    auto e = engine();
    start_decoding(e, 1, 1000);
    admit(e, {2, 0, 500, 100}, stage_with_prefix(0), 0.0);
    CHECK(e.decode_batch_size() == 1);
    advance_decode(e, 0.0, 5.0);
    CHECK(e.find_call(1)->tokens_emitted == doctest::Approx(100.0));
    CHECK(e.find_call(2)->tokens_emitted == 0.0);
}

TEST_CASE("token time is increasing in batch size unless alpha is 0") {
    EngineParams p;
    p.base_token_time = 0.03;
    p.batch_slope = 0.15;
    for (std::size_t b = 1; b < 32; ++b) CHECK(p.token_time(b + 1) > p.token_time(b));
    p.batch_slope = 0.0;
    for (std::size_t b = 1; b < 32; ++b) CHECK(p.token_time(b) == p.base_token_time);
}

TEST_CASE("next_completion") {
    SUBCASE("one call, 10 left") {
        auto e = engine();
        start_decoding(e, 1, 10);
        const auto c = next_completion(e, 2.0);
        REQUIRE(c);
        CHECK(c->request_id == 1);
        CHECK(c->completes_at == doctest::Approx(2.5));
    }
    SUBCASE("empty batch") {
        auto e = engine();
        CHECK_FALSE(next_completion(e, 0.0));
    }
    SUBCASE("only prefill") {
        auto e = engine();
        admit(e, {1, 0, 100, 10}, stage_with_prefix(0), 0.0);
        CHECK_FALSE(next_completion(e, 0.0));
    }
    SUBCASE("10 vs 20 left at b=2") {
        auto e = engine();
        start_decoding(e, 4, 20);
        start_decoding(e, 9, 10);
        const auto c = next_completion(e, 1.0);
        REQUIRE(c);
        CHECK(c->request_id == 9);
        CHECK(c->completes_at == doctest::Approx(1.0 + 10 * 0.06));
    }
    SUBCASE("ties go to the lower request id") {
        auto e = engine();
        start_decoding(e, 8, 10);
        start_decoding(e, 3, 10);
        CHECK(next_completion(e, 0.0)->request_id == 3);
    }
}

TEST_CASE("finish_call releases call tokens and keeps the prefix") {
    auto e = engine();
    make_warm(e, 0, 1000);
    admit(e, {1, 0, 100, 10}, stage_with_prefix(1000), 0.0);
    begin_decode(e, 1);
    advance_decode(e, 0.0, 0.5);
    const auto done = finish_call(e, 1, 0.5);
    CHECK(done.generated_tokens() == 10);
    CHECK(e.kv_used_tokens == 1000);
    CHECK(e.prefix(0)->last_used == 0.5);
    CHECK_NOTHROW(check_engine_invariants(e));
}

TEST_CASE("evict_idle_prefix") {
    SUBCASE("idle prefix is released") {
        auto e = engine();
        make_warm(e, 0, 1000);
        evict_idle_prefix(e, 0);
        CHECK(e.kv_used_tokens == 0);
        CHECK_FALSE(e.has_prefix(0));
    }
    SUBCASE("absent prefix is a no-op") {
        auto e = engine();
        make_warm(e, 0, 1000);
        evict_idle_prefix(e, 1);
        CHECK(e.kv_used_tokens == 1000);
    }
    SUBCASE("prefix with a decoding call") {
        auto e = engine();
        make_warm(e, 0, 1000);
        start_decoding(e, 1, 50);
        CHECK_THROWS_AS(evict_idle_prefix(e, 0), PrefixInUse);
    }
}

TEST_CASE("make_room evicts least recently used idle prefixes") {
    auto e = engine(3000);
    e.resident_prefixes = {{1, 1000, 5.0}, {2, 1000, 1.0}};
    e.kv_used_tokens = recompute_kv_used(e);
    const auto s = stage_with_prefix(1000);
    const LlmCall call{1, 0, 500, 200};
    CHECK_FALSE(can_admit(e, call, s));
    CHECK(can_admit_after_eviction(e, call, s));
    CHECK(make_room(e, call, s));
    CHECK(e.has_prefix(1));
    CHECK_FALSE(e.has_prefix(2));
    CHECK(can_admit(e, call, s));
}

TEST_CASE("tool_service_time") {
    RngStreams streams(5);
    auto rng = streams.stream("tool");
    CHECK(tool_service_time({4, Distribution::constant(0.3)}, rng) == 0.3);
    CHECK(tool_service_time({4, Distribution::uniform(0.1, 0.1)}, rng) == doctest::Approx(0.1));
    auto a = RngStreams(42).stream("tool");
    auto b = RngStreams(42).stream("tool");
    const ToolPoolParams p{4, Distribution::uniform(0.0, 1.0)};
    CHECK(tool_service_time(p, a) == tool_service_time(p, b));
}
