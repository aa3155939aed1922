#include <doctest.h>

#include <cmath>
#include <numeric>
#include <random>

#include "racerl/errors.hpp"
#include "racerl/replay.hpp"

using namespace racerl;
using namespace racerl::replay;

namespace {

Transition make(std::uint64_t episode, std::uint32_t step, double reward = 0.0,
                Termination term = Termination::none) {
  Transition t;
  t.state = {static_cast<double>(episode), static_cast<double>(step)};
  t.next_state = {static_cast<double>(episode), static_cast<double>(step + 1)};
  t.action = {0.0, 0.1 * step, 0.0};
  t.reward = reward;
  t.termination = term;
  t.episode = episode;
  t.step = step;
  return t;
}

}  // namespace

TEST_CASE("push and eviction") {
  ReplayBuffer b(3);
  b.push(make(0, 0));
  CHECK(b.size() == 1);
  for (std::uint32_t i = 1; i < 4; ++i) b.push(make(0, i));
  CHECK(b.size() == 3);
  std::vector<double> steps;
  for (std::size_t s = 0; s < 3; ++s) steps.push_back(b.at(s).step);
  std::sort(steps.begin(), steps.end());
  CHECK(steps == std::vector<double>{1, 2, 3});
}

TEST_CASE("uniform sampling") {
  std::mt19937_64 rng(1);
  ReplayBuffer empty(4);
  CHECK_THROWS_AS(empty.sample_uniform(4, rng), NotReadyError);

  ReplayBuffer one(4);
  one.push(make(0, 0));
  const Batch b = one.sample_uniform(4, rng);
  REQUIRE(b.handles.size() == 4);
  for (const auto& h : b.handles) CHECK(h.slot == 0);

  ReplayBuffer ten(10);
  for (std::uint32_t i = 0; i < 10; ++i) ten.push(make(0, i));
  std::vector<int> counts(10, 0);
  const int draws = 100000;
  for (int i = 0; i < draws / 10; ++i)
    for (const auto& h : ten.sample_uniform(10, rng).handles) ++counts[h.slot];
  for (int c : counts) CHECK(std::abs(c / double(draws) - 0.1) < 0.02);

  std::mt19937_64 r1(99), r2(99);
  const Batch x = ten.sample_uniform(32, r1);
  const Batch y = ten.sample_uniform(32, r2);
  for (std::size_t i = 0; i < 32; ++i) CHECK(x.handles[i].slot == y.handles[i].slot);
}

TEST_CASE("priority formula") {
  PERConfig c;
  c.lambda3 = 0.1;
  c.epsilon = 1e-3;
  CHECK(priority(2.0, 5.0, c) == 4.501);
  CHECK(priority(0.0, 0.0, c) == 1e-3);
  CHECK(priority(-2.0, 5.0, c) == 4.501);
}

TEST_CASE("prioritized sampling follows p^alpha") {
  std::mt19937_64 rng(7);
  PERConfig c;
  c.alpha = 1.0;
  c.epsilon = 1e-12;
  c.lambda3 = 0.0;
  ReplayBuffer b(2, c);
  b.push(make(0, 0));
  b.push(make(0, 1));
  b.update_priority({0, 0}, 1.0, 0.0);
  b.update_priority({1, 1}, std::sqrt(3.0), 0.0);
  CHECK(b.probability(0) == doctest::Approx(0.25));
  int first = 0;
  const int draws = 100000;
  for (int i = 0; i < draws / 10; ++i)
    for (const auto& h : b.sample_prioritized(10, rng).handles) first += h.slot == 0;
  CHECK(std::abs(first / double(draws) - 0.25) < 0.01);
}

TEST_CASE("prioritized sampling is uniform for equal priorities or alpha = 0") {
  for (double alpha : {0.7, 0.0}) {
    std::mt19937_64 rng(3);
    PERConfig c;
    c.alpha = alpha;
    ReplayBuffer b(8, c);
    for (std::uint32_t i = 0; i < 8; ++i) b.push(make(0, i));
    if (alpha == 0.0)
      for (std::uint32_t i = 0; i < 8; ++i) b.update_priority({i, i}, i * 3.0, i);
    std::vector<int> counts(8, 0);
    for (int i = 0; i < 5000; ++i)
      for (const auto& h : b.sample_prioritized(16, rng).handles) ++counts[h.slot];
    for (int n : counts) CHECK(std::abs(n / 80000.0 - 0.125) < 0.01);
  }
}

TEST_CASE("new transitions enter with the maximum priority") {
  std::mt19937_64 rng(5);
  PERConfig c;
  ReplayBuffer b(256, c);
  for (std::uint32_t i = 0; i < 200; ++i) b.push(make(0, i));
  for (std::uint32_t i = 0; i < 200; ++i) b.update_priority({i, i}, i == 0 ? 3.0 : 0.1, 0.0);
  b.push(make(1, 0));
  CHECK(b.raw_priority(200) == doctest::Approx(priority(3.0, 0.0, c)));
  // expected number of draws of the newcomer in one 32-sample batch
  double hits = 0.0;
  const int trials = 2000;
  for (int t = 0; t < trials; ++t)
    for (const auto& h : b.sample_prioritized(32, rng).handles) hits += h.slot == 200;
  CHECK(32 * b.probability(200) >= 1.0);
  CHECK(hits / trials >= 1.0);
}

TEST_CASE("stale priority updates are skipped and counted") {
  ReplayBuffer b(2, PERConfig{});
  b.push(make(0, 0));
  b.push(make(0, 1));
  const SampleHandle old{0, 0};
  b.push(make(0, 2));  // evicts slot 0
  const double before = b.raw_priority(0);
  b.update_priority(old, 5.0, 0.0);
  CHECK(b.stats().stale_updates == 1);
  CHECK(b.raw_priority(0) == before);
}

TEST_CASE("sum tree stays consistent under random operations") {
  std::mt19937_64 rng(11);
  PERConfig c;
  ReplayBuffer b(1000, c);
  std::uniform_real_distribution<double> u(0.0, 10.0);
  std::vector<SampleHandle> handles;
  for (int i = 0; i < 10000; ++i) {
    if (i % 3 == 0 || b.size() == 0) {
      b.push(make(i / 50, static_cast<std::uint32_t>(i % 50)));
    } else {
      for (const auto& h : b.sample_prioritized(4, rng).handles) b.update_priority(h, u(rng), u(rng));
    }
  }
  CHECK(b.tree().max_consistency_error() < 1e-9);
  double leaves = 0.0;
  for (std::size_t s = 0; s < b.tree().capacity(); ++s) leaves += b.tree().get(s);
  CHECK(std::abs(b.tree().total() - leaves) < 1e-9 * std::max(1.0, leaves));
}

TEST_CASE("sum tree find") {
  SumTree t(4);
  t.set(0, 1.0);
  t.set(1, 0.0);
  t.set(2, 2.0);
  t.set(3, 1.0);
  CHECK(t.total() == 4.0);
  CHECK(t.find(0.5) == 0);
  CHECK(t.find(1.0) == 2);
  CHECK(t.find(2.99) == 2);
  CHECK(t.find(3.5) == 3);
}

TEST_CASE("windows pad with the episode's first state") {
  ReplayBuffer b(64);
  for (std::uint32_t i = 0; i < 3; ++i) b.push(make(7, i));
  for (std::uint32_t i = 0; i < 10; ++i) b.push(make(8, i));

  const Window w1 = b.assemble_window(1, 1);
  REQUIRE(w1.states.size() == 1);
  CHECK(*w1.states[0] == b.at(1).state);

  const Window w = b.assemble_window(2, 4);  // episode 7, step 2
  REQUIRE(w.states.size() == 4);
  CHECK((*w.states[0])[1] == 0);
  CHECK((*w.states[1])[1] == 0);
  CHECK((*w.states[2])[1] == 1);
  CHECK((*w.states[3])[1] == 2);

  // mid-episode, checked against the raw log
  const Window m = b.assemble_window(3 + 6, 4);
  for (int k = 0; k < 4; ++k) {
    CHECK((*m.states[k])[0] == 8);
    CHECK((*m.states[k])[1] == 3 + k);
    CHECK(m.actions[k] == b.at(3 + 3 + k).action);
  }

  // first step of an episode never reaches back into the previous one
  const Window e = b.assemble_window(3, 4);
  for (const auto* s : e.states) CHECK((*s)[0] == 8);
}

TEST_CASE("next window ends at the successor state") {
  ReplayBuffer b(16);
  for (std::uint32_t i = 0; i < 5; ++i) b.push(make(0, i));
  const Window w = b.assemble_next_window(3, 3, {0.5, 0.5, 0.5});
  REQUIRE(w.states.size() == 3);
  CHECK((*w.states[0])[1] == 2);
  CHECK((*w.states[1])[1] == 3);
  CHECK((*w.states[2])[1] == 4);
  CHECK(w.actions.back() == Action{0.5, 0.5, 0.5});
}

TEST_CASE("windows survive ring wrap-around") {
  ReplayBuffer b(5);
  for (std::uint32_t i = 0; i < 8; ++i) b.push(make(0, i));
  // slot 1 holds step 6, slot 0 step 5, slot 4 step 4, slot 3 step 3 (the oldest)
  const Window w = b.assemble_window(1, 4);
  CHECK((*w.states[0])[1] == 3);
  CHECK((*w.states[3])[1] == 6);
  const Window o = b.assemble_window(3, 3);
  for (const auto* s : o.states) CHECK((*s)[1] == 3);
}

TEST_CASE("n-step returns") {
  ReplayBuffer b(32);
  b.push(make(0, 0, 1.0));
  b.push(make(0, 1, 1.0));
  b.push(make(0, 2, 1.0));
  b.push(make(0, 3, 5.0, Termination::out_of_track));
  b.push(make(1, 0, 2.0));

  const NStep one = b.assemble_nstep(0, 1, 0.5);
  CHECK(one.discounted_reward == b.at(0).reward);
  CHECK(one.last_slot == 0);
  CHECK(one.horizon == 1);
  CHECK(one.termination == b.at(0).termination);

  const NStep two = b.assemble_nstep(0, 2, 0.5);
  CHECK(two.discounted_reward == 1.5);
  CHECK(two.last_slot == 1);
  CHECK(two.horizon == 2);

  const NStep cut = b.assemble_nstep(2, 4, 0.5);
  CHECK(cut.horizon == 2);
  CHECK(cut.discounted_reward == 1.0 + 0.5 * 5.0);
  CHECK(cut.termination == Termination::out_of_track);

  // truncated at the newest stored transition
  const NStep tail = b.assemble_nstep(4, 3, 0.9);
  CHECK(tail.horizon == 1);
  CHECK(tail.termination == Termination::none);
}

TEST_CASE("n = 1 equals reading the transition") {
  ReplayBuffer b(8);
  for (std::uint32_t i = 0; i < 8; ++i)
    b.push(make(0, i, 0.3 * i, i == 7 ? Termination::max_steps : Termination::none));
  for (std::size_t s = 0; s < 8; ++s) {
    const NStep n = b.assemble_nstep(s, 1, 0.99);
    CHECK(n.discounted_reward == b.at(s).reward);
    CHECK(n.termination == b.at(s).termination);
    CHECK(n.last_slot == s);
  }
}

TEST_CASE("configuration validation") {
  CHECK_THROWS_AS(ReplayBuffer(0), ConfigError);
  PERConfig bad;
  bad.epsilon = 0.0;
  CHECK_THROWS_AS(ReplayBuffer(4, bad), ConfigError);
  std::mt19937_64 rng(1);
  ReplayBuffer u(4);
  u.push(make(0, 0));
  CHECK_THROWS_AS(u.sample_prioritized(2, rng), ConfigError);
}

TEST_CASE("importance weights when enabled") {
  std::mt19937_64 rng(1);
  PERConfig c;
  c.importance_sampling = true;
  ReplayBuffer b(4, c);
  for (std::uint32_t i = 0; i < 4; ++i) b.push(make(0, i));
  b.update_priority({0, 0}, 5.0, 0.0);
  const Batch batch = b.sample_prioritized(8, rng);
  double mx = 0.0;
  for (double w : batch.weights) {
    CHECK(w > 0.0);
    CHECK(w <= 1.0);
    mx = std::max(mx, w);
  }
  CHECK(mx == 1.0);
}
