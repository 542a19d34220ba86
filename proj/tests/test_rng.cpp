#include <cmath>
#include <set>
#include <vector>

#include "doctest.h"
#include "proplab/rng.hpp"

using namespace proplab;

TEST_CASE("keyed streams are reproducible and independent") {
  Rng a = Rng::keyed(42, stream_tag("alpha"), 7);
  Rng b = Rng::keyed(42, stream_tag("alpha"), 7);
  for (int i = 0; i < 100; ++i) CHECK(a.next() == b.next());

  Rng c = Rng::keyed(42, stream_tag("alpha"), 8);
  Rng d = Rng::keyed(42, stream_tag("beta"), 7);
  Rng e = Rng::keyed(43, stream_tag("alpha"), 7);
  Rng base = Rng::keyed(42, stream_tag("alpha"), 7);
  CHECK(base.next() != c.next());
  CHECK(base.next() != d.next());
  CHECK(base.next() != e.next());
}

TEST_CASE("stream tags differ per name and are usable as constants") {
  static_assert(stream_tag("scene-gen") != stream_tag("oracle-score"));
  static_assert(stream_tag("a") != stream_tag("b"));
  CHECK(stream_tag("") != 0);
}

TEST_CASE("uniform01 stays in the half-open unit interval") {
  Rng rng = Rng::keyed(1, stream_tag("u01"));
  double lo = 1.0, hi = 0.0;
  for (int i = 0; i < 100000; ++i) {
    const double v = rng.uniform01();
    CHECK(v >= 0.0);
    CHECK(v < 1.0);
    lo = std::min(lo, v);
    hi = std::max(hi, v);
  }
  CHECK(lo < 0.01);
  CHECK(hi > 0.99);
}

TEST_CASE("below is unbiased enough and in range") {
  Rng rng = Rng::keyed(2, stream_tag("below"));
  std::vector<int> counts(10, 0);
  const int draws = 100000;
  for (int i = 0; i < draws; ++i) {
    const std::uint64_t v = rng.below(10);
    REQUIRE(v < 10);
    counts[v] += 1;
  }
  for (int c : counts) {
    CHECK(c > draws / 10 - 600);
    CHECK(c < draws / 10 + 600);
  }
  CHECK(rng.below(1) == 0);
}

TEST_CASE("uniform_int covers both endpoints") {
  Rng rng = Rng::keyed(3, stream_tag("uint"));
  std::set<int> seen;
  for (int i = 0; i < 1000; ++i) {
    const int v = rng.uniform_int(-2, 3);
    CHECK(v >= -2);
    CHECK(v <= 3);
    seen.insert(v);
  }
  CHECK(seen.size() == 6);
}

TEST_CASE("uniform respects bounds") {
  Rng rng = Rng::keyed(4, stream_tag("uniform"));
  for (int i = 0; i < 1000; ++i) {
    const double v = rng.uniform(2.5, 7.5);
    CHECK(v >= 2.5);
    CHECK(v < 7.5);
  }
}

TEST_CASE("bernoulli extremes are deterministic") {
  Rng rng = Rng::keyed(5, stream_tag("bern"));
  for (int i = 0; i < 100; ++i) {
    CHECK_FALSE(rng.bernoulli(0.0));
    CHECK(rng.bernoulli(1.0));
  }
  int hits = 0;
  for (int i = 0; i < 10000; ++i) hits += rng.bernoulli(0.25);
  CHECK(hits > 2200);
  CHECK(hits < 2800);
}

TEST_CASE("normal with zero sigma returns the exact mean") {
  Rng rng = Rng::keyed(6, stream_tag("norm"));
  CHECK(rng.normal(3.25, 0.0) == 3.25);
  CHECK(rng.normal(-1.0, 0.0) == -1.0);
}

TEST_CASE("normal has roughly the right moments") {
  Rng rng = Rng::keyed(7, stream_tag("norm"), 1);
  const int n = 200000;
  double sum = 0.0, sq = 0.0;
  for (int i = 0; i < n; ++i) {
    const double v = rng.normal(1.0, 2.0);
    sum += v;
    sq += v * v;
  }
  const double mean = sum / n;
  const double var = sq / n - mean * mean;
  CHECK(mean == doctest::Approx(1.0).epsilon(0.02));
  CHECK(var == doctest::Approx(4.0).epsilon(0.05));
}
