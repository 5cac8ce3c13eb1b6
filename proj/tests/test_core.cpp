#include <catch2/catch_amalgamated.hpp>

#include "seafield/rng.hpp"
#include "seafield/tensor.hpp"

using namespace seafield;

TEST_CASE("rng is reproducible for equal seeds") {
    Rng a(42), b(42);
    for (int i = 0; i < 1000; ++i) {
        REQUIRE(a.uniform() == b.uniform());
        REQUIRE(a.normal() == b.normal());
    }
}

TEST_CASE("rng streams differ across seeds and forks") {
    Rng a(1), b(2);
    bool any_diff = false;
    for (int i = 0; i < 16; ++i) any_diff = any_diff || (a.raw() != b.raw());
    REQUIRE(any_diff);

    Rng base(7);
    Rng f1 = base.fork(0);
    Rng f2 = base.fork(1);
    REQUIRE(f1.raw() != f2.raw());
}

TEST_CASE("rng normal moments are sane") {
    Rng r(3);
    double sum = 0.0, sq = 0.0;
    const int n = 200000;
    for (int i = 0; i < n; ++i) {
        double x = r.normal();
        sum += x;
        sq += x * x;
    }
    REQUIRE(std::abs(sum / n) < 0.02);
    REQUIRE(std::abs(sq / n - 1.0) < 0.02);
}

TEST_CASE("rng shuffle is a permutation") {
    Rng r(5);
    std::vector<int> v{0, 1, 2, 3, 4, 5, 6, 7, 8, 9};
    auto orig = v;
    r.shuffle(v);
    auto sorted = v;
    std::sort(sorted.begin(), sorted.end());
    REQUIRE(sorted == orig);
}

TEST_CASE("tensor shape and indexing") {
    Tensor t({2, 3});
    t.at(1, 2) = 5.0;
    REQUIRE(t.size() == 6);
    REQUIRE(t[5] == 5.0);
    REQUIRE(t.shape_str() == "(2,3)");

    Tensor u = t.reshaped({3, 2});
    REQUIRE(u.at(2, 1) == 5.0);
    REQUIRE_THROWS_AS(t.reshaped({4, 2}), Error);

    Tensor f = Tensor::full({2, 2}, 3.5);
    REQUIRE(f.at(0, 1) == 3.5);
}

TEST_CASE("tensor rejects mismatched data") {
    REQUIRE_THROWS_AS(Tensor({2, 2}, {1.0, 2.0}), Error);
}
