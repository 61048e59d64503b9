#include <doctest.h>

#include <atomic>
#include <set>
#include <stdexcept>
#include <type_traits>

#include "hnt/error.hpp"
#include "hnt/parallel.hpp"
#include "hnt/rng.hpp"

using namespace hnt;

TEST_CASE("derived seeds are stable and separate streams") {
  CHECK(derive_seed(1, "a", 0) == derive_seed(1, "a", 0));
  std::set<std::uint64_t> seen;
  for (std::uint64_t root : {0u, 1u, 2u}) {
    for (const char* stage : {"a", "b", "cv-folds"}) {
      for (std::uint64_t task = 0; task < 50; ++task) seen.insert(derive_seed(root, stage, task));
    }
  }
  CHECK(seen.size() == 3 * 3 * 50);
  auto r1 = make_rng(5, "x", 2), r2 = make_rng(5, "x", 2);
  CHECK(r1() == r2());
  CHECK(fnv1a64("") == 0xcbf29ce484222325ULL);
  CHECK(splitmix64(0) != splitmix64(1));
}

TEST_CASE("parallel_for visits every index once at any worker count") {
  for (std::size_t w : {1u, 2u, 5u}) {
    set_worker_count(w);
    CHECK(worker_count() == w);
    std::vector<std::atomic<int>> hits(97);
    parallel_for(hits.size(), [&](std::size_t i) { hits[i]++; });
    for (auto& h : hits) CHECK(h.load() == 1);
  }
  set_worker_count(0);
}

TEST_CASE("parallel_for rethrows the lowest-index failure") {
  set_worker_count(4);
  try {
    parallel_for(50, [](std::size_t i) {
      if (i == 7 || i == 30) throw DataError("task " + std::to_string(i));
    });
    FAIL("expected an exception");
  } catch (const DataError& e) {
    CHECK(std::string(e.what()) == "task 7");
  }
  std::atomic<int> inner{0};
  parallel_for(3, [&](std::size_t) { parallel_for(4, [&](std::size_t) { inner++; }); });
  CHECK(inner.load() == 12);
  set_worker_count(0);
}

TEST_CASE("error hierarchy") {
  CHECK(std::is_base_of_v<DataError, FormatError>);
  CHECK(std::is_base_of_v<DataError, ComparabilityError>);
  CHECK(std::is_base_of_v<DataError, UnsplittableError>);
  CHECK(std::is_base_of_v<NumericalError, UndefinedMetricError>);
  CHECK_FALSE(std::is_base_of_v<DataError, UsageError>);
}
