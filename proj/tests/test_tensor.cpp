#include <doctest.h>

#include <cmath>
#include <random>

#include "sgpt/error.hpp"
#include "sgpt/tensor.hpp"
#include "support/oracles.hpp"

using namespace sgpt;

namespace {

Tensor random_tensor(Shape shape, std::mt19937_64& rng, double scale = 1.0) {
    Tensor t = Tensor::zeros(std::move(shape));
    std::uniform_real_distribution<double> dist(-scale, scale);
    for (double& v : t.mutable_data()) v = dist(rng);
    return t;
}

bool all_finite(const Tensor& t) {
    for (double v : t.data()) {
        if (!std::isfinite(v)) return false;
    }
    return true;
}

}  // namespace

TEST_CASE("matmul identity and zero cases") {
    Tape tape;
    Tensor eye = Tensor::from_data({2, 2}, {1, 0, 0, 1});
    Tensor a = Tensor::from_data({2, 2}, {1, 2, 3, 4});
    Tensor out = tape.matmul(eye, a);
    CHECK(out.at(0, 0) == 1.0);
    CHECK(out.at(0, 1) == 2.0);
    CHECK(out.at(1, 0) == 3.0);
    CHECK(out.at(1, 1) == 4.0);

    Tensor row = Tensor::from_data({1, 2}, {1, 2});
    Tensor zeros = Tensor::from_data({2, 1}, {0, 0});
    CHECK(tape.matmul(row, zeros).at(0, 0) == 0.0);
}

TEST_CASE("matmul hand-computed product") {
    Tape tape;
    Tensor a = Tensor::from_data({2, 2}, {1, 2, 3, 4});
    Tensor b = Tensor::from_data({2, 1}, {5, 6});
    Tensor out = tape.matmul(a, b);
    CHECK(out.at(0, 0) == doctest::Approx(17.0).epsilon(1e-12));
    CHECK(out.at(1, 0) == doctest::Approx(39.0).epsilon(1e-12));
}

TEST_CASE("matmul shape mismatch names both shapes") {
    Tape tape;
    Tensor a = Tensor::zeros({2, 3});
    Tensor b = Tensor::zeros({2, 2});
    CHECK_THROWS_WITH_AS(tape.matmul(a, b),
                         doctest::Contains("[2x3]"), ShapeError);
    try {
        tape.matmul(a, b);
    } catch (const ShapeError& e) {
        CHECK(std::string(e.what()).find("[2x2]") != std::string::npos);
    }
}

TEST_CASE("matmul associativity on random instances") {
    std::mt19937_64 rng(7);
    Tape tape;
    for (int trial = 0; trial < 20; ++trial) {
        Tensor a = random_tensor({3, 4}, rng);
        Tensor b = random_tensor({4, 2}, rng);
        Tensor c = random_tensor({2, 5}, rng);
        Tensor left = tape.matmul(tape.matmul(a, b), c);
        Tensor right = tape.matmul(a, tape.matmul(b, c));
        for (std::size_t i = 0; i < left.size(); ++i) {
            CHECK(left.data()[i] ==
                  doctest::Approx(right.data()[i]).epsilon(1e-9));
        }
    }
}

TEST_CASE("log_softmax values") {
    Tape tape;
    SUBCASE("uniform input is symmetric") {
        Tensor x = Tensor::from_data({3}, {0, 0, 0});
        Tensor y = tape.log_softmax(x);
        for (std::size_t i = 0; i < 3; ++i) {
            CHECK(y.at(i) == doctest::Approx(-std::log(3.0)).epsilon(1e-12));
        }
    }
    SUBCASE("two-way hand computation") {
        Tensor x = Tensor::from_data({2}, {0.0, std::log(3.0)});
        Tensor y = tape.log_softmax(x);
        CHECK(y.at(0) == doctest::Approx(-1.386294).epsilon(1e-6));
        CHECK(y.at(1) == doctest::Approx(-0.287682).epsilon(1e-6));
    }
    SUBCASE("large inputs do not overflow") {
        Tensor x = Tensor::from_data({2}, {1000.0, 0.0});
        Tensor y = tape.log_softmax(x);
        CHECK(all_finite(y));
        CHECK(y.at(0) == doctest::Approx(0.0).epsilon(1e-9));
    }
    SUBCASE("rows exponentiate to one") {
        std::mt19937_64 rng(3);
        Tensor x = random_tensor({4, 7}, rng, 5.0);
        Tensor y = tape.log_softmax(x);
        for (std::size_t r = 0; r < 4; ++r) {
            double total = 0.0;
            for (std::size_t j = 0; j < 7; ++j) total += std::exp(y.at(r, j));
            CHECK(total == doctest::Approx(1.0).epsilon(1e-9));
        }
    }
    SUBCASE("empty axis is rejected") {
        CHECK_THROWS_AS(tape.log_softmax(Tensor::zeros({2, 0})), ShapeError);
    }
}

TEST_CASE("log_softmax is shift invariant") {
    std::mt19937_64 rng(11);
    Tape tape;
    Tensor x = random_tensor({3, 5}, rng, 4.0);
    Tensor shifted = Tensor::zeros({3, 5});
    for (std::size_t i = 0; i < x.size(); ++i) {
        shifted.mutable_data()[i] = x.data()[i] + 123.456;
    }
    Tensor a = tape.log_softmax(x);
    Tensor b = tape.log_softmax(shifted);
    for (std::size_t i = 0; i < a.size(); ++i) {
        CHECK(a.data()[i] == doctest::Approx(b.data()[i]).epsilon(1e-9));
    }
}

TEST_CASE("layer_norm basics") {
    Tape tape;
    SUBCASE("constant row maps to bias") {
        Tensor x = Tensor::from_data({1, 3}, {4.2, 4.2, 4.2});
        Tensor g = Tensor::full({3}, 1.0);
        Tensor b = Tensor::zeros({3});
        Tensor y = tape.layer_norm(x, g, b);
        for (std::size_t j = 0; j < 3; ++j) {
            CHECK(y.at(0, j) == doctest::Approx(0.0).epsilon(1e-12));
        }
    }
    SUBCASE("already normalized row passes through") {
        Tensor x = Tensor::from_data({1, 2}, {1.0, -1.0});
        Tensor y = tape.layer_norm(x, Tensor::full({2}, 1.0), Tensor::zeros({2}),
                                   1e-12);
        CHECK(y.at(0, 0) == doctest::Approx(1.0).epsilon(1e-6));
        CHECK(y.at(0, 1) == doctest::Approx(-1.0).epsilon(1e-6));
    }
    SUBCASE("affine output hand computation") {
        Tensor x = Tensor::from_data({1, 2}, {0.0, 2.0});
        Tensor g = Tensor::from_data({2}, {2.0, 2.0});
        Tensor b = Tensor::from_data({2}, {1.0, 1.0});
        Tensor y = tape.layer_norm(x, g, b, 1e-5);
        CHECK(y.at(0, 0) == doctest::Approx(-0.99999).epsilon(1e-5));
        CHECK(y.at(0, 1) == doctest::Approx(2.99999).epsilon(1e-5));
    }
}

TEST_CASE("gelu values and asymptotes") {
    Tape tape;
    Tensor x = Tensor::from_data({4}, {0.0, 1.0, 20.0, -20.0});
    Tensor y = tape.gelu(x);
    CHECK(y.at(0) == 0.0);
    CHECK(y.at(1) == doctest::Approx(0.841345).epsilon(1e-6));
    CHECK(y.at(2) == doctest::Approx(20.0).epsilon(1e-9));
    CHECK(y.at(3) == doctest::Approx(0.0).epsilon(1e-9));
}

TEST_CASE("backward on simple graphs") {
    SUBCASE("sum gradient is ones") {
        Tape tape;
        Tensor x = Tensor::from_data({3}, {5.0, -2.0, 0.5});
        x.set_requires_grad(true);
        Tensor loss = tape.sum(x);
        tape.backward(loss);
        for (std::size_t i = 0; i < 3; ++i) CHECK(x.grad()[i] == 1.0);
    }
    SUBCASE("x*x gradient at 3 is 6") {
        Tape tape;
        Tensor x = Tensor::from_data({1}, {3.0});
        x.set_requires_grad(true);
        Tensor loss = tape.sum(tape.mul(x, x));
        tape.backward(loss);
        CHECK(x.grad()[0] == doctest::Approx(6.0).epsilon(1e-12));
    }
    SUBCASE("shared subexpression is not double counted") {
        // loss = sum(y) + sum(y) with y = 2x must give dloss/dx = 4.
        Tape tape;
        Tensor x = Tensor::from_data({2}, {1.0, 2.0});
        x.set_requires_grad(true);
        Tensor y = tape.mul_scalar(x, 2.0);
        Tensor loss = tape.add(tape.sum(y), tape.sum(y));
        tape.backward(loss);
        CHECK(x.grad()[0] == doctest::Approx(4.0).epsilon(1e-12));
        CHECK(x.grad()[1] == doctest::Approx(4.0).epsilon(1e-12));
    }
    SUBCASE("non-scalar loss is rejected") {
        Tape tape;
        Tensor x = Tensor::from_data({2}, {1.0, 2.0});
        x.set_requires_grad(true);
        Tensor y = tape.mul_scalar(x, 2.0);
        CHECK_THROWS_AS(tape.backward(y), ContractError);
    }
    SUBCASE("loss must come from the tape") {
        Tape tape;
        Tensor x = Tensor::scalar(1.0);
        CHECK_THROWS_AS(tape.backward(x), ContractError);
    }
}

namespace {

/// Checks analytic against finite-difference gradients for a scalar graph
/// built by `build` over the given leaf.
void check_gradients(Tensor leaf, const std::function<Tensor(Tape&)>& build) {
    leaf.zero_grad();
    Tape tape;
    Tensor loss = build(tape);
    tape.backward(loss);
    std::vector<double> analytic(leaf.grad().begin(), leaf.grad().end());
    auto numeric = oracles::finite_difference(leaf, [&]() {
        Tape t2;
        return build(t2).value();
    });
    CHECK(oracles::max_rel_error(analytic, numeric) < 1e-4);
}

}  // namespace

TEST_CASE("gradients match finite differences per op") {
    std::mt19937_64 rng(21);

    SUBCASE("matmul") {
        Tensor a = random_tensor({3, 4}, rng);
        Tensor b = random_tensor({4, 2}, rng);
        a.set_requires_grad(true);
        check_gradients(a, [&](Tape& t) { return t.sum(t.mul(t.matmul(a, b), t.matmul(a, b))); });
    }
    SUBCASE("matmul_nt") {
        Tensor a = random_tensor({3, 4}, rng);
        Tensor b = random_tensor({2, 4}, rng);
        b.set_requires_grad(true);
        check_gradients(b, [&](Tape& t) { return t.sum(t.gelu(t.matmul_nt(a, b))); });
    }
    SUBCASE("layer_norm") {
        Tensor x = random_tensor({2, 5}, rng);
        Tensor g = random_tensor({5}, rng);
        Tensor b = random_tensor({5}, rng);
        x.set_requires_grad(true);
        g.set_requires_grad(true);
        b.set_requires_grad(true);
        auto build = [&](Tape& t) { return t.sum(t.mul(t.layer_norm(x, g, b), t.layer_norm(x, g, b))); };
        check_gradients(x, build);
        check_gradients(g, build);
        check_gradients(b, build);
    }
    SUBCASE("log_softmax") {
        Tensor x = random_tensor({2, 6}, rng, 3.0);
        x.set_requires_grad(true);
        std::vector<std::size_t> picks{1, 4};
        check_gradients(x, [&](Tape& t) {
            return t.sum(t.gather_rows(t.log_softmax(x), picks));
        });
    }
    SUBCASE("softmax_causal") {
        Tensor x = random_tensor({4, 4}, rng, 2.0);
        x.set_requires_grad(true);
        check_gradients(x, [&](Tape& t) {
            return t.sum(t.mul(t.softmax_causal(x), t.softmax_causal(x)));
        });
    }
    SUBCASE("normalize_rows") {
        Tensor x = random_tensor({3, 4}, rng);
        x.set_requires_grad(true);
        std::vector<std::size_t> picks{0, 2, 1};
        check_gradients(x, [&](Tape& t) {
            return t.sum(t.gather_rows(t.normalize_rows(x), picks));
        });
    }
    SUBCASE("slice and concat") {
        Tensor x = random_tensor({3, 6}, rng);
        x.set_requires_grad(true);
        check_gradients(x, [&](Tape& t) {
            std::vector<Tensor> parts{t.slice_cols(x, 0, 2), t.slice_cols(x, 2, 4)};
            return t.sum(t.mul(t.concat_cols(parts), t.concat_cols(parts)));
        });
    }
    SUBCASE("embedding lookup") {
        Tensor tok = random_tensor({5, 3}, rng);
        Tensor pos = random_tensor({4, 3}, rng);
        tok.set_requires_grad(true);
        pos.set_requires_grad(true);
        std::vector<int> ids{1, 4, 1};  // repeated id exercises accumulation
        auto build = [&](Tape& t) {
            return t.sum(t.gelu(t.embed_sequence(tok, pos, ids)));
        };
        check_gradients(tok, build);
        check_gradients(pos, build);
    }
    SUBCASE("neg_mean_diag") {
        Tensor x = random_tensor({3, 3}, rng);
        x.set_requires_grad(true);
        check_gradients(x, [&](Tape& t) {
            return t.neg_mean_diag(t.log_softmax(t.mul_scalar(x, 3.0)));
        });
    }
}

TEST_CASE("documented operations keep finite data on finite input") {
    std::mt19937_64 rng(5);
    Tape tape;
    Tensor x = random_tensor({4, 8}, rng, 50.0);
    CHECK(all_finite(tape.log_softmax(x)));
    CHECK(all_finite(tape.gelu(x)));
    CHECK(all_finite(
        tape.layer_norm(x, Tensor::full({8}, 1.0), Tensor::zeros({8}))));
    Tensor sq = random_tensor({5, 5}, rng, 30.0);
    CHECK(all_finite(tape.softmax_causal(sq)));
}

TEST_CASE("tensor invariants") {
    CHECK(shape_size({}) == 1);
    CHECK(shape_size({3, 4}) == 12);
    CHECK_THROWS_AS(Tensor::from_data({2, 2}, {1.0}), ShapeError);
    Tensor t = Tensor::zeros({2, 2});
    CHECK(t.grad().empty());
    t.grad_buffer();
    CHECK(t.grad().size() == t.size());
}
