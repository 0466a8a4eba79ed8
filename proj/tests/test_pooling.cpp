#include <doctest.h>

#include <cmath>
#include <random>

#include "sgpt/error.hpp"
#include "sgpt/pooling.hpp"

using namespace sgpt;

TEST_CASE("position weights follow the 1-indexed linear ramp") {
    const auto w = position_weights(3, PoolingMethod::WeightedMean);
    CHECK(w[0] == doctest::Approx(1.0 / 6.0).epsilon(1e-15));
    CHECK(w[1] == doctest::Approx(2.0 / 6.0).epsilon(1e-15));
    CHECK(w[2] == doctest::Approx(3.0 / 6.0).epsilon(1e-15));
}

TEST_CASE("weights sum to one and increase strictly") {
    for (std::size_t s : {std::size_t{1}, std::size_t{3}, std::size_t{100},
                          std::size_t{10000}}) {
        const auto w = position_weights(s, PoolingMethod::WeightedMean);
        double total = 0.0;
        for (double v : w) total += v;
        CHECK(std::abs(total - 1.0) <= 1e-12);
        for (std::size_t i = 1; i < s; ++i) CHECK(w[i] > w[i - 1]);
    }
}

TEST_CASE("single-token sequences pool identically under every method") {
    Tape tape;
    Tensor h = Tensor::from_data({1, 3}, {0.25, -7.0, 3.5});
    for (auto method : {PoolingMethod::WeightedMean, PoolingMethod::Mean,
                        PoolingMethod::LastToken}) {
        Tensor v = pool(tape, h, {method, -1});
        CHECK(v.rank() == 1);
        CHECK(v.at(0) == 0.25);
        CHECK(v.at(1) == -7.0);
        CHECK(v.at(2) == 3.5);
    }
}

TEST_CASE("weighted mean hand computation") {
    Tape tape;
    Tensor h = Tensor::from_data({3, 1}, {1.0, 2.0, 3.0});
    Tensor v = pool(tape, h, {PoolingMethod::WeightedMean, -1});
    CHECK(v.at(0) == doctest::Approx(14.0 / 6.0).epsilon(1e-12));
}

TEST_CASE("last token pooling returns the final row") {
    Tape tape;
    Tensor h = Tensor::from_data({3, 2}, {1, 2, 3, 4, 5, 6});
    Tensor v = pool(tape, h, {PoolingMethod::LastToken, -1});
    CHECK(v.at(0) == 5.0);
    CHECK(v.at(1) == 6.0);
}

TEST_CASE("pooling is linear in the hidden states") {
    std::mt19937_64 rng(4);
    std::uniform_real_distribution<double> dist(-2.0, 2.0);
    Tape tape;
    Tensor h = Tensor::zeros({5, 3});
    for (double& x : h.mutable_data()) x = dist(rng);
    Tensor h3 = Tensor::zeros({5, 3});
    for (std::size_t i = 0; i < h.size(); ++i) {
        h3.mutable_data()[i] = 3.0 * h.data()[i];
    }
    for (auto method : {PoolingMethod::WeightedMean, PoolingMethod::Mean}) {
        Tensor a = pool(tape, h, {method, -1});
        Tensor b = pool(tape, h3, {method, -1});
        for (std::size_t j = 0; j < 3; ++j) {
            CHECK(b.at(j) == doctest::Approx(3.0 * a.at(j)).epsilon(1e-12));
        }
    }
}

TEST_CASE("constant sequences are fixed points") {
    Tape tape;
    Tensor h = Tensor::zeros({7, 2});
    for (std::size_t i = 0; i < 7; ++i) {
        h.mutable_data()[i * 2] = 1.5;
        h.mutable_data()[i * 2 + 1] = -0.25;
    }
    Tensor v = pool(tape, h, {PoolingMethod::WeightedMean, -1});
    CHECK(v.at(0) == doctest::Approx(1.5).epsilon(1e-12));
    CHECK(v.at(1) == doctest::Approx(-0.25).epsilon(1e-12));
}

TEST_CASE("empty sequences and bad layers are rejected") {
    Tape tape;
    CHECK_THROWS_AS(position_weights(0, PoolingMethod::Mean), InputError);
    CHECK_THROWS_AS(pool(tape, Tensor::zeros({0, 4}), {}), InputError);
    CHECK(resolve_pooling_layer({PoolingMethod::Mean, -1}, 2) == 2);
    CHECK(resolve_pooling_layer({PoolingMethod::Mean, 0}, 2) == 0);
    CHECK_THROWS_AS(resolve_pooling_layer({PoolingMethod::Mean, 3}, 2),
                    InputError);
}
