#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <cmath>
#include <cstring>

#include "doctest.h"
#include "rsmoe/kernels.hpp"
#include "rsmoe/tensor.hpp"

using namespace rsmoe;

namespace {

Tensor randu(Shape s, Rng& g) { return Tensor::uniform(std::move(s), g, -1.0, 1.0); }

// grad_check over every grad-requiring input of a composite loss
double check_all(const std::function<Tensor()>& loss_fn, std::initializer_list<Tensor> params) {
    double worst = 0.0;
    for (const Tensor& p : params) worst = std::max(worst, grad_check(loss_fn, p));
    return worst;
}

}  // namespace

TEST_CASE("matmul values, worked by hand") {
    Tensor a = Tensor::from({2, 2}, {1, 2, 3, 4});
    Tensor b = Tensor::from({2, 1}, {1, 1});
    Tensor c = matmul(a, b);
    CHECK(c.at(0, 0) == 3.0);  // 1*1 + 2*1
    CHECK(c.at(1, 0) == 7.0);  // 3*1 + 4*1
}

TEST_CASE("softmax of [0, ln 3] is [1/4, 3/4]") {
    Tensor x = Tensor::from({1, 2}, {0.0, std::log(3.0)});
    Tensor y = softmax(x, 1);
    CHECK(y.at(0, 0) == doctest::Approx(0.25).epsilon(1e-12));
    CHECK(y.at(0, 1) == doctest::Approx(0.75).epsilon(1e-12));
}

TEST_CASE("layer norm of [1, 3] is [-1, 1] up to eps") {
    Tensor x = Tensor::from({1, 2}, {1.0, 3.0});
    Tensor gamma = Tensor::full({2}, 1.0);
    Tensor beta = Tensor::zeros({2});
    Tensor y = layer_norm(x, gamma, beta, 1e-12);
    CHECK(y.at(0, 0) == doctest::Approx(-1.0).epsilon(1e-9));
    CHECK(y.at(0, 1) == doctest::Approx(1.0).epsilon(1e-9));
    CHECK_THROWS_AS((void)layer_norm(x, gamma, beta, 0.0), ConfigError);
}

TEST_CASE("cross entropy of uniform logits is ln(classes)") {
    Tensor logits = Tensor::zeros({1, 4});
    Tensor l = cross_entropy(logits, {2}, -1);
    CHECK(l.item() == doctest::Approx(std::log(4.0)).epsilon(1e-12));
}

TEST_CASE("cross entropy skips pad targets") {
    Tensor logits = Tensor::from({2, 3}, {5, 0, 0, 0, 0, 0});
    // row 1 is padding; only row 0 counts
    Tensor with_pad = cross_entropy(logits, {0, 2}, 2);
    Tensor solo = cross_entropy(slice_rows(logits, 0, 1), {0}, -1);
    CHECK(with_pad.item() == doctest::Approx(solo.item()).epsilon(1e-12));
}

TEST_CASE("scalar helpers") {
    Tensor x = Tensor::from({2, 2}, {1, 2, 3, 4});
    CHECK(sum_all(x).item() == 10.0);
    Tensor m = mean_rows(x);
    CHECK(m.at(0, 0) == 2.0);
    CHECK(m.at(0, 1) == 3.0);
    CHECK(transpose(x).at(0, 1) == 3.0);
}

TEST_CASE("shape mismatches throw") {
    Tensor a = Tensor::zeros({2, 3});
    Tensor b = Tensor::zeros({2, 2});
    CHECK_THROWS_AS((void)matmul(a, b), ShapeError);
    CHECK_THROWS_AS((void)add(a, b), ShapeError);
    CHECK_THROWS_AS((void)reshape(a, {4, 2}), ShapeError);
    CHECK_THROWS_AS((void)cross_entropy(a, {0, 1, 2}, -1), ShapeError);
}

TEST_CASE("gradients match central differences per op") {
    Rng g = make_rng(11, 0);
    Tensor a = randu({3, 4}, g).set_requires_grad(true);
    Tensor b = randu({4, 2}, g).set_requires_grad(true);
    Tensor v = randu({1, 4}, g).set_requires_grad(true);
    Tensor gamma = Tensor::uniform({4}, g, 0.5, 1.5).set_requires_grad(true);
    Tensor beta = randu({4}, g).set_requires_grad(true);

    SUBCASE("matmul") {
        auto f = [&] { return sum_all(matmul(a, b)); };
        CHECK(check_all(f, {a, b}) < 1e-6);
    }
    SUBCASE("add and mul") {
        Tensor c = randu({3, 4}, g).set_requires_grad(true);
        auto f = [&] { return sum_all(mul(add(a, c), c)); };
        CHECK(check_all(f, {a, c}) < 1e-6);
    }
    SUBCASE("add_rowvec") {
        auto f = [&] { return sum_all(gelu(add_rowvec(a, v))); };
        CHECK(check_all(f, {a, v}) < 1e-6);
    }
    SUBCASE("gelu") {
        auto f = [&] { return sum_all(gelu(a)); };
        CHECK(check_all(f, {a}) < 1e-6);
    }
    SUBCASE("softmax both axes") {
        // weight by a fixed tensor so every lane element has distinct pull
        Tensor w = randu({3, 4}, g);
        auto f0 = [&] { return sum_all(mul(softmax(a, 0), w)); };
        auto f1 = [&] { return sum_all(mul(softmax(a, 1), w)); };
        CHECK(check_all(f0, {a}) < 1e-6);
        CHECK(check_all(f1, {a}) < 1e-6);
    }
    SUBCASE("layer_norm") {
        Tensor w = randu({3, 4}, g);
        auto f = [&] { return sum_all(mul(layer_norm(a, gamma, beta, 1e-5), w)); };
        CHECK(check_all(f, {a, gamma, beta}) < 1e-6);
    }
    SUBCASE("cross_entropy") {
        auto f = [&] { return cross_entropy(matmul(a, b), {1, 0, 1}, -1); };
        CHECK(check_all(f, {a, b}) < 1e-6);
    }
    SUBCASE("embedding") {
        Tensor table = randu({5, 4}, g).set_requires_grad(true);
        // repeated id checks gather-grad accumulation
        Tensor w = randu({3, 4}, g);
        auto f = [&] { return sum_all(mul(embedding(table, {0, 3, 3}), w)); };
        CHECK(check_all(f, {table}) < 1e-6);
    }
    SUBCASE("concat and slice") {
        Tensor c = randu({2, 4}, g).set_requires_grad(true);
        Tensor w = randu({3, 2}, g);
        auto f = [&] {
            Tensor cat = concat_rows({a, c});           // [5,4]
            Tensor left = slice_cols(cat, 1, 2);        // [5,2]
            return sum_all(mul(slice_rows(left, 1, 3), w));
        };
        CHECK(check_all(f, {a, c}) < 1e-6);
        Tensor w2 = randu({3, 8}, g);
        auto f2 = [&] { return sum_all(mul(concat_cols({a, a}), w2)); };
        CHECK(check_all(f2, {a}) < 1e-6);
    }
    SUBCASE("scale reshape mean_rows") {
        Tensor w = randu({1, 4}, g);
        auto f = [&] {
            return sum_all(mul(mean_rows(reshape(scale(a, 1.7), {3, 4})), w));
        };
        CHECK(check_all(f, {a}) < 1e-6);
    }
}

TEST_CASE("backward accumulates: two passes double the gradient") {
    Rng g = make_rng(3, 0);
    Tensor a = randu({2, 3}, g).set_requires_grad(true);
    auto run = [&] {
        Graph gr;
        Tensor L = sum_all(mul(a, a));
        gr.backward(L);
    };
    run();
    std::vector<double> once = a.grad();
    run();
    for (size_t i = 0; i < once.size(); ++i)
        CHECK(a.grad()[i] == doctest::Approx(2.0 * once[i]).epsilon(1e-12));
}

TEST_CASE("no tape without grad-requiring inputs") {
    Rng g = make_rng(4, 0);
    Tensor a = randu({4, 4}, g);
    Graph gr;
    Tensor y = gelu(matmul(a, a));
    CHECK(gr.node_count() == 0);
    CHECK_FALSE(y.requires_grad());

    Tensor b = randu({4, 4}, g).set_requires_grad(true);
    {
        NoGradGuard ng;
        Tensor z = matmul(b, b);
        CHECK_FALSE(z.requires_grad());
    }
    CHECK(gr.node_count() == 0);
    Tensor z = matmul(b, b);
    CHECK(gr.node_count() == 1);
    CHECK(z.requires_grad());
}

TEST_CASE("detach_copy breaks aliasing") {
    Tensor a = Tensor::from({2}, {1, 2});
    Tensor alias = a;
    Tensor copy = a.detach_copy();
    a.data()[0] = 9;
    CHECK(alias.at(0) == 9.0);
    CHECK(copy.at(0) == 1.0);
}

TEST_CASE("serial and parallel kernels agree bitwise") {
    Rng g = make_rng(21, 0);
    Tensor a = randu({13, 17}, g).set_requires_grad(true);
    Tensor b = randu({17, 7}, g).set_requires_grad(true);
    Tensor gm = Tensor::uniform({7}, g, 0.5, 1.5).set_requires_grad(true);
    Tensor bt = randu({7}, g).set_requires_grad(true);

    auto run = [&](kernels::Mode m) {
        kernels::set_mode(m);
        Graph gr;
        Tensor h = layer_norm(gelu(matmul(a, b)), gm, bt, 1e-5);
        Tensor L = cross_entropy(h, {1, 2, 3, 4, 5, 6, 0, 1, 2, 3, 4, 5, 6}, -1);
        gr.backward(L);
        uint64_t h1 = hash_tensor(h);
        h1 = hash_bytes(a.grad().data(), a.grad().size() * sizeof(double), h1);
        h1 = hash_bytes(b.grad().data(), b.grad().size() * sizeof(double), h1);
        h1 = hash_bytes(gm.grad().data(), gm.grad().size() * sizeof(double), h1);
        a.zero_grad();
        b.zero_grad();
        gm.zero_grad();
        bt.zero_grad();
        return h1;
    };
    const uint64_t serial = run(kernels::Mode::serial);
    const uint64_t parallel = run(kernels::Mode::parallel);
    kernels::set_mode(kernels::Mode::parallel);
    CHECK(serial == parallel);
}

TEST_CASE("softmax lanes sum to one and survive large inputs") {
    Rng g = make_rng(8, 0);
    for (int rep = 0; rep < 20; ++rep) {
        Tensor x = Tensor::uniform({4, 6}, g, -700.0, 700.0);
        Tensor y = softmax(x, 1);
        for (int i = 0; i < 4; ++i) {
            double s = 0;
            for (int j = 0; j < 6; ++j) {
                const double v = y.at(i, j);
                CHECK(std::isfinite(v));
                CHECK(v >= 0.0);
                s += v;
            }
            CHECK(s == doctest::Approx(1.0).epsilon(1e-9));
        }
    }
}

TEST_CASE("rng streams are stable and independent") {
    Rng a = make_rng(5, 1);
    Rng a2 = make_rng(5, 1);
    Rng b = make_rng(5, 2);
    bool all_same = true, any_diff = false;
    for (int i = 0; i < 100; ++i) {
        const double x = uniform(a, 0, 1), x2 = uniform(a2, 0, 1), y = uniform(b, 0, 1);
        all_same &= x == x2;
        any_diff |= x != y;
    }
    CHECK(all_same);
    CHECK(any_diff);
    // bounds respected
    Rng c = make_rng(9, 9);
    for (int i = 0; i < 200; ++i) {
        const int v = randint(c, -3, 3);
        CHECK(v >= -3);
        CHECK(v <= 3);
    }
}
