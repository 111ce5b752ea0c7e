#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <vector>

#include "caplab/kernels.hpp"
#include "caplab/ops.hpp"
#include "caplab/optim.hpp"
#include "caplab/rng.hpp"
#include "gradcheck.hpp"

using namespace caplab;
namespace O = caplab::ops;

namespace {

dtensor randn(std::vector<int> shape, Rng& rng, double scale = 1.0) {
    auto t = dtensor::zeros(std::move(shape));
    for (size_t i = 0; i < t.numel(); ++i) t.data()[i] = rng.normal() * scale;
    return t;
}

void check_op(std::vector<dtensor> params,
              const std::function<dtensor(std::vector<dtensor>&)>& f, double tol = 1e-4) {
    auto res = gradcheck(params, f);
    CAPTURE(res.param);
    CAPTURE(res.index);
    CHECK(res.max_abs_diff < tol);
}

}  // namespace

TEST_CASE("tensor handles shapes and storage") {
    auto t = Tensor::zeros({2, 3});
    CHECK(t.rank() == 2);
    CHECK(t.numel() == 6);
    t.at(1, 2) = 5.0f;
    CHECK(t.at(1, 2) == 5.0f);
    CHECK_THROWS_AS(Tensor::from({2, 2}, {1.f, 2.f, 3.f}), ShapeError);
    CHECK_THROWS_AS(Tensor::zeros({-1, 2}), ShapeError);
    CHECK_THROWS_AS(t.item(), ShapeError);
    CHECK(Tensor::scalar(4.0f).item() == 4.0f);
}

TEST_CASE("backward requires a scalar") {
    auto t = Tensor::zeros({2}, true);
    CHECK_THROWS_AS(t.backward(), ShapeError);
}

TEST_CASE("shared subexpression DAG matches per-path derivative") {
    // e = (a*b + a) * (a*b); both c=a*b and a feed multiple consumers.
    auto a = dtensor::scalar(1.5, true);
    auto b = dtensor::scalar(-0.7, true);
    auto c = O::mul(a, b);
    auto d = O::add(c, a);
    auto e = O::mul(d, c);
    e.backward();
    const double av = 1.5, bv = -0.7;
    const double de_da = 2 * av * bv * bv + 2 * av * bv;
    const double de_db = 2 * av * av * bv + av * av;
    CHECK(a.grad()[0] == doctest::Approx(de_da).epsilon(1e-12));
    CHECK(b.grad()[0] == doctest::Approx(de_db).epsilon(1e-12));
}

TEST_CASE("NoGradGuard detaches the graph") {
    auto a = Tensor::scalar(2.0f, true);
    NoGradGuard ng;
    auto y = O::scale(a, 3.0);
    CHECK_FALSE(y.requires_grad());
    CHECK(y.node()->parents.empty());
}

TEST_CASE("gradcheck: elementwise ops") {
    Rng rng(11);
    auto x = randn({3, 4}, rng);
    auto y = randn({3, 4}, rng);
    check_op({x, y}, [](auto& p) { return O::sum(O::add(p[0], p[1])); });
    check_op({x, y}, [](auto& p) { return O::sum(O::mul(p[0], p[1])); });
    check_op({x}, [](auto& p) { return O::sum(O::scale(p[0], -2.5)); });
    check_op({x}, [](auto& p) { return O::sum(O::gelu(p[0])); });
    check_op({x}, [](auto& p) { return O::sum(O::exp_t(p[0])); });

    auto pos = randn({2, 3}, rng);
    for (size_t i = 0; i < pos.numel(); ++i) pos.data()[i] = 0.5 + std::abs(pos.data()[i]);
    check_op({pos}, [](auto& p) { return O::sum(O::reciprocal(p[0])); });

    // keep clamp inputs away from the breakpoints
    auto cx = dtensor::from({4}, {-2.0, -0.3, 0.4, 1.9});
    check_op({cx}, [](auto& p) { return O::sum(O::mul(O::clamp(p[0], -1.0, 1.0), p[0])); });

    auto v = randn({4}, rng);
    check_op({x, v}, [](auto& p) { return O::sum(O::add_rowvec(p[0], p[1])); });

    auto s = dtensor::scalar(0.8);
    check_op({x, s}, [](auto& p) { return O::sum(O::mul(O::scale_by(p[0], p[1]), p[0])); });
}

TEST_CASE("clamp zeroes gradient outside the range") {
    auto x = dtensor::from({3}, {-2.0, 0.0, 2.0}, true);
    auto y = O::sum(O::clamp(x, -1.0, 1.0));
    y.backward();
    CHECK(x.grad()[0] == 0.0);
    CHECK(x.grad()[1] == 1.0);
    CHECK(x.grad()[2] == 0.0);
}

TEST_CASE("gradcheck: matmul and transpose") {
    Rng rng(12);
    auto a = randn({3, 5}, rng);
    auto b = randn({5, 2}, rng);
    auto w = randn({3, 2}, rng);
    check_op({a, b, w}, [](auto& p) { return O::sum(O::mul(O::matmul(p[0], p[1]), p[2])); });
    check_op({a}, [](auto& p) {
        auto t = O::transpose(p[0]);
        return O::sum(O::mul(t, t));
    });
}

TEST_CASE("matmul rejects mismatched shapes naming both") {
    auto a = Tensor::zeros({2, 3});
    auto b = Tensor::zeros({4, 2});
    try {
        O::matmul(a, b);
        FAIL("expected ShapeError");
    } catch (const ShapeError& e) {
        std::string msg = e.what();
        CHECK(msg.find("[2x3]") != std::string::npos);
        CHECK(msg.find("[4x2]") != std::string::npos);
    }
}

TEST_CASE("gradcheck: softmax along both axes") {
    Rng rng(13);
    auto x = randn({3, 4}, rng, 2.0);
    auto w = randn({3, 4}, rng);
    check_op({x, w}, [](auto& p) { return O::sum(O::mul(O::softmax(p[0], 1), p[1])); });
    check_op({x, w}, [](auto& p) { return O::sum(O::mul(O::softmax(p[0], 0), p[1])); });
}

TEST_CASE("softmax rows sum to one and shift invariance holds") {
    Rng rng(14);
    auto x = randn({5, 7}, rng, 3.0);
    auto y = O::softmax(x, 1);
    for (int i = 0; i < 5; ++i) {
        double s = 0.0;
        for (int j = 0; j < 7; ++j) {
            s += y.at(i, j);
            CHECK(y.at(i, j) >= 0.0);
        }
        CHECK(s == doctest::Approx(1.0).epsilon(1e-12));
    }
    auto shifted = O::softmax(O::scale(O::add(x, dtensor::filled({5, 7}, 100.0)), 1.0), 1);
    for (size_t i = 0; i < y.numel(); ++i)
        CHECK(shifted.data()[i] == doctest::Approx(y.data()[i]).epsilon(1e-12));
}

TEST_CASE("gradcheck: cross entropy") {
    Rng rng(15);
    auto logits = randn({5, 6}, rng, 2.0);
    std::vector<int> targets = {0, 3, -1, 5, 2};  // one ignored
    check_op({logits}, [&](auto& p) { return O::cross_entropy(p[0], targets, -1); });
    check_op({logits}, [&](auto& p) {
        int cnt = 0;
        return O::cross_entropy_sum(p[0], targets, -1, &cnt);
    });
}

TEST_CASE("cross entropy edge semantics") {
    auto logits = Tensor::from({2, 3}, {0.f, 1.f, 2.f, 0.f, 0.f, 0.f}, true);
    SUBCASE("out-of-range target raises IndexError") {
        CHECK_THROWS_AS(O::cross_entropy(logits, {0, 3}, -1), IndexError);
        CHECK_THROWS_AS(O::cross_entropy(logits, {-2, 1}, -1), IndexError);
    }
    SUBCASE("all-ignored yields zero loss and zero gradient") {
        auto loss = O::cross_entropy(logits, {-1, -1}, -1);
        CHECK(loss.item() == 0.0f);
        loss.backward();
        for (float g : logits.grad()) CHECK(g == 0.0f);
    }
    SUBCASE("sum variant reports token count") {
        int cnt = -1;
        auto loss = O::cross_entropy_sum(logits, {0, -1}, -1, &cnt);
        CHECK(cnt == 1);
        // single row: sum == mean
        auto mean = O::cross_entropy(logits, {0, -1}, -1);
        CHECK(loss.item() == doctest::Approx(mean.item()));
    }
    SUBCASE("uniform logits give log V") {
        auto u = Tensor::zeros({1, 4});
        auto loss = O::cross_entropy(u, {2}, -1);
        CHECK(loss.item() == doctest::Approx(std::log(4.0)).epsilon(1e-6));
    }
}

TEST_CASE("gradcheck: bce with logits") {
    Rng rng(16);
    auto z = randn({3, 4}, rng, 1.5);
    auto t = dtensor::zeros({3, 4});
    for (size_t i = 0; i < t.numel(); ++i) t.data()[i] = (i % 3 == 0) ? 1.0 : 0.0;
    check_op({z}, [&](auto& p) { return O::bce_with_logits(p[0], t); });
}

TEST_CASE("gradcheck: layer norm") {
    Rng rng(17);
    auto x = randn({4, 6}, rng, 2.0);
    auto g = randn({6}, rng);
    auto b = randn({6}, rng);
    check_op({x, g, b},
             [](auto& p) { return O::sum(O::mul(O::layer_norm(p[0], p[1], p[2]), p[0])); },
             2e-4);
}

TEST_CASE("layer norm output is standardized") {
    Rng rng(18);
    auto x = randn({3, 64}, rng, 5.0);
    auto g = dtensor::filled({64}, 1.0);
    auto b = dtensor::zeros({64});
    auto y = O::layer_norm(x, g, b);
    for (int r = 0; r < 3; ++r) {
        double mean = 0.0, var = 0.0;
        for (int j = 0; j < 64; ++j) mean += y.at(r, j);
        mean /= 64;
        for (int j = 0; j < 64; ++j) var += (y.at(r, j) - mean) * (y.at(r, j) - mean);
        var /= 64;
        CHECK(mean == doctest::Approx(0.0).epsilon(1e-9));
        CHECK(var == doctest::Approx(1.0).epsilon(1e-3));
    }
}

TEST_CASE("gradcheck: l2 row normalization") {
    Rng rng(19);
    auto x = randn({3, 5}, rng);
    auto w = randn({3, 5}, rng);
    check_op({x, w}, [](auto& p) { return O::sum(O::mul(O::l2_normalize_rows(p[0]), p[1])); });
    auto z = dtensor::zeros({2, 3});
    CHECK_THROWS_AS(O::l2_normalize_rows(z), ValueError);
}

TEST_CASE("gradcheck: gather and slicing") {
    Rng rng(20);
    auto table = randn({7, 4}, rng);
    std::vector<int> ids = {1, 1, 6, 0, 3};
    check_op({table}, [&](auto& p) {
        auto e = O::embedding(p[0], ids);
        return O::sum(O::mul(e, e));
    });
    CHECK_THROWS_AS(O::embedding(table, {7}), IndexError);
    CHECK_THROWS_AS(O::embedding(table, {-1}), IndexError);

    auto x = randn({5, 6}, rng);
    check_op({x}, [](auto& p) {
        auto a = O::slice_rows(p[0], 1, 3);
        return O::sum(O::mul(a, a));
    });
    check_op({x}, [](auto& p) {
        auto a = O::slice_cols(p[0], 2, 3);
        return O::sum(O::mul(a, a));
    });
    CHECK_THROWS_AS(O::slice_rows(x, 4, 3), IndexError);
    CHECK_THROWS_AS(O::slice_cols(x, -1, 2), IndexError);

    auto a2 = randn({2, 3}, rng);
    auto b2 = randn({4, 3}, rng);
    check_op({a2, b2}, [](auto& p) {
        auto c = O::concat_rows<double>({p[0], p[1]});
        return O::sum(O::mul(c, c));
    });
    auto a3 = randn({3, 2}, rng);
    auto b3 = randn({3, 5}, rng);
    check_op({a3, b3}, [](auto& p) {
        auto c = O::concat_cols<double>({p[0], p[1]});
        return O::sum(O::mul(c, c));
    });
}

TEST_CASE("slice/concat round trip") {
    Rng rng(21);
    auto x = randn({4, 6}, rng);
    auto back = O::concat_cols<double>({O::slice_cols(x, 0, 2), O::slice_cols(x, 2, 4)});
    for (size_t i = 0; i < x.numel(); ++i) CHECK(back.data()[i] == x.data()[i]);
}

TEST_CASE("gradcheck: masked reductions and time resampling") {
    Rng rng(22);
    auto x = randn({6, 3}, rng);
    check_op({x}, [](auto& p) {
        auto m = O::masked_mean_rows(p[0], 4);
        return O::sum(O::mul(m, m));
    });
    CHECK_THROWS_AS(O::masked_mean_rows(x, 0), ValueError);
    CHECK_THROWS_AS(O::masked_mean_rows(x, 7), ValueError);

    check_op({x}, [](auto& p) {
        auto m = O::mask_tail_rows(p[0], 4);
        return O::sum(O::mul(m, m));
    });

    for (int valid : {6, 5, 3}) {
        check_op({x}, [valid](auto& p) {
            auto d = O::downsample2(p[0], valid);
            return O::sum(O::mul(d, d));
        });
    }
    check_op({x}, [](auto& p) {
        auto u = O::upsample2(p[0], 11);
        return O::sum(O::mul(u, u));
    });
}

TEST_CASE("downsample2 averages only valid frames") {
    auto x = dtensor::from({4, 1}, {2.0, 4.0, 6.0, 999.0});
    auto d = O::downsample2(x, 3);  // rows 0..2 valid
    CHECK(d.dim(0) == 2);
    CHECK(d.at(0, 0) == 3.0);   // (2+4)/2
    CHECK(d.at(1, 0) == 6.0);   // lone valid member, garbage row untouched
    auto full = O::downsample2(x, 4);
    CHECK(full.at(1, 0) == doctest::Approx((6.0 + 999.0) / 2));
}

TEST_CASE("upsample2 repeats frames and trims") {
    auto x = dtensor::from({3, 2}, {1, 2, 3, 4, 5, 6});
    auto u = O::upsample2(x, 5);
    CHECK(u.dim(0) == 5);
    CHECK(u.at(0, 0) == 1.0);
    CHECK(u.at(1, 0) == 1.0);
    CHECK(u.at(2, 1) == 4.0);
    CHECK(u.at(4, 0) == 5.0);
    CHECK_THROWS_AS(O::upsample2(x, 7), ValueError);
}

TEST_CASE("gradcheck: strided temporal convolution") {
    Rng rng(23);
    for (int T : {6, 7}) {
        auto x = randn({T, 3}, rng);
        auto w = randn({3, 3, 2}, rng, 0.5);
        auto b = randn({2}, rng, 0.1);
        check_op({x, w, b}, [](auto& p) {
            auto y = O::conv1d_k3s2(p[0], p[1], p[2]);
            return O::sum(O::mul(y, y));
        });
    }
}

TEST_CASE("conv1d_k3s2 output length is ceil(T/2)") {
    auto w = Tensor::zeros({3, 2, 4});
    auto b = Tensor::zeros({4});
    CHECK(O::conv1d_k3s2(Tensor::zeros({10, 2}), w, b).dim(0) == 5);
    CHECK(O::conv1d_k3s2(Tensor::zeros({11, 2}), w, b).dim(0) == 6);
    CHECK(O::conv1d_k3s2(Tensor::zeros({1, 2}), w, b).dim(0) == 1);
}

TEST_CASE("end-to-end composite graph passes finite differences") {
    Rng rng(24);
    auto x = randn({6, 8}, rng);
    auto w1 = randn({8, 8}, rng, 0.4);
    auto b1 = randn({8}, rng, 0.1);
    auto g = dtensor::filled({8}, 1.0);
    auto be = dtensor::zeros({8});
    auto w2 = randn({8, 5}, rng, 0.4);
    std::vector<int> targets = {1, 4, 0, -1, 2, 2};
    check_op({x, w1, b1, g, be, w2}, [&](auto& p) {
        auto h = O::gelu(O::add_rowvec(O::matmul(p[0], p[1]), p[2]));
        auto n = O::layer_norm(O::add(h, p[0]), p[3], p[4]);
        auto logits = O::matmul(O::softmax(n, 1), p[5]);
        return O::cross_entropy(logits, targets, -1);
    }, 1e-3);
}

// --- kernels: serial reference vs parallel primary -------------------------

TEST_CASE("parallel kernels match serial bit for bit") {
    Rng rng(25);
    const int m = 33, k = 17, n = 29;
    std::vector<float> a(size_t(m) * k), b(size_t(k) * n), bt(size_t(n) * k);
    for (auto& v : a) v = float(rng.normal());
    for (auto& v : b) v = float(rng.normal());
    for (auto& v : bt) v = float(rng.normal());

    std::vector<float> ref(size_t(m) * n), got(size_t(m) * n);
    kernels::serial::matmul(a.data(), b.data(), ref.data(), m, k, n);

    for (int th : {1, 2, 3, 8}) {
        kernels::set_threads(th);
        kernels::matmul(a.data(), b.data(), got.data(), m, k, n);
        for (size_t i = 0; i < ref.size(); ++i) REQUIRE(got[i] == ref[i]);
    }

    std::vector<float> refnt(size_t(m) * n), gotnt(size_t(m) * n);
    kernels::serial::matmul_nt(a.data(), bt.data(), refnt.data(), m, k, n);
    kernels::set_threads(7);
    kernels::matmul_nt(a.data(), bt.data(), gotnt.data(), m, k, n);
    for (size_t i = 0; i < refnt.size(); ++i) REQUIRE(gotnt[i] == refnt[i]);

    std::vector<float> reftn(size_t(k) * n), gottn(size_t(k) * n);
    std::vector<float> a2(size_t(m) * k), b2(size_t(m) * n);
    for (auto& v : a2) v = float(rng.normal());
    for (auto& v : b2) v = float(rng.normal());
    kernels::serial::matmul_tn(a2.data(), b2.data(), reftn.data(), m, k, n);
    kernels::matmul_tn(a2.data(), b2.data(), gottn.data(), m, k, n);
    for (size_t i = 0; i < reftn.size(); ++i) REQUIRE(gottn[i] == reftn[i]);

    std::vector<float> sx(31 * 13), sref(31 * 13), sgot(31 * 13);
    for (auto& v : sx) v = float(rng.normal() * 3);
    kernels::serial::softmax_lanes(sx.data(), sref.data(), 31, 13, 1);
    kernels::set_threads(5);
    kernels::softmax_lanes(sx.data(), sgot.data(), 31, 13, 1);
    for (size_t i = 0; i < sref.size(); ++i) REQUIRE(sgot[i] == sref[i]);

    std::vector<float> gain(13), bias(13), lref(31 * 13), lgot(31 * 13);
    for (auto& v : gain) v = float(rng.normal());
    for (auto& v : bias) v = float(rng.normal());
    kernels::serial::layer_norm_rows(sx.data(), gain.data(), bias.data(), lref.data(), 31, 13, 1e-5);
    kernels::layer_norm_rows(sx.data(), gain.data(), bias.data(), lgot.data(), 31, 13, 1e-5);
    for (size_t i = 0; i < lref.size(); ++i) REQUIRE(lgot[i] == lref[i]);

    kernels::set_threads(0);  // restore default resolution floor (clamps to 1)
    kernels::set_threads(4);
}

TEST_CASE("composite graph output is identical at any thread count") {
    Rng rng(26);
    auto run = [&](int th) {
        kernels::set_threads(th);
        Rng local(99);
        auto x = Tensor::zeros({40, 32});
        for (size_t i = 0; i < x.numel(); ++i) x.data()[i] = float(local.normal());
        auto w = Tensor::zeros({32, 32});
        for (size_t i = 0; i < w.numel(); ++i) w.data()[i] = float(local.normal() * 0.2);
        auto y = O::softmax(O::matmul(O::gelu(O::matmul(x, w)), O::transpose(w)), 1);
        return y.values();
    };
    auto one = run(1);
    auto four = run(4);
    REQUIRE(one.size() == four.size());
    for (size_t i = 0; i < one.size(); ++i) REQUIRE(one[i] == four[i]);
}

// --- optimizer ---------------------------------------------------------------

TEST_CASE("adam single step matches the closed form") {
    auto w = TensorT<double>::scalar(1.0, true);
    w.grad()[0] = 0.5;
    AdamT<double> opt(0.1);
    opt.step({{"w", w}});
    const double expect = 1.0 - 0.1 * 0.5 / (std::sqrt(0.25) + 1e-8);
    CHECK(w.item() == doctest::Approx(expect).epsilon(1e-12));

    // second step with the same gradient
    w.grad()[0] = 0.5;
    const double m2 = 0.9 * 0.05 + 0.1 * 0.5;
    const double v2 = 0.999 * (0.001 * 0.25) + 0.001 * 0.25;
    const double mhat = m2 / (1.0 - 0.9 * 0.9);
    const double vhat = v2 / (1.0 - 0.999 * 0.999);
    const double expect2 = expect - 0.1 * mhat / (std::sqrt(vhat) + 1e-8);
    opt.step({{"w", w}});
    CHECK(w.item() == doctest::Approx(expect2).epsilon(1e-10));
}

TEST_CASE("adam drives a quadratic bowl to its minimum") {
    auto w = Tensor::from({4}, {4.f, -3.f, 0.f, 2.f}, true);
    const std::vector<float> target = {1.f, -2.f, 3.f, 0.5f};
    Adam opt(0.05);
    for (int it = 0; it < 400; ++it) {
        w.zero_grad();
        for (int i = 0; i < 4; ++i) w.grad()[size_t(i)] = w.at(i) - target[size_t(i)];
        opt.step({{"w", w}});
    }
    for (int i = 0; i < 4; ++i) CHECK(w.at(i) == doctest::Approx(target[size_t(i)]).epsilon(1e-2));
}

TEST_CASE("gradient clipping rescales to the requested global norm") {
    auto a = Tensor::scalar(0.f, true);
    auto b = Tensor::scalar(0.f, true);
    a.grad()[0] = 3.0f;
    b.grad()[0] = 4.0f;
    std::vector<Tensor> ps = {a, b};
    CHECK(grad_global_norm(ps) == doctest::Approx(5.0));
    const double pre = clip_grad_norm(ps, 2.5);
    CHECK(pre == doctest::Approx(5.0));
    CHECK(a.grad()[0] == doctest::Approx(1.5f));
    CHECK(b.grad()[0] == doctest::Approx(2.0f));
    // below the cap: untouched
    const double pre2 = clip_grad_norm(ps, 100.0);
    CHECK(pre2 == doctest::Approx(2.5));
    CHECK(a.grad()[0] == doctest::Approx(1.5f));
}

TEST_CASE("matmul hand oracles") {
    auto eye = Tensor::from({2, 2}, {1, 0, 0, 1});
    auto m = Tensor::from({2, 2}, {3.5f, -1.f, 2.f, 0.25f});
    auto p = O::matmul(eye, m);
    for (size_t i = 0; i < 4; ++i) CHECK(p.data()[i] == m.data()[i]);
    auto a = Tensor::from({2, 2}, {1, 2, 3, 4});
    auto b = Tensor::from({2, 1}, {5, 6});
    auto c = O::matmul(a, b);
    CHECK(c.at(0, 0) == 17.0f);
    CHECK(c.at(1, 0) == 39.0f);
}

TEST_CASE("softmax closed forms") {
    auto u = O::softmax(Tensor::filled({1, 4}, 2.0f), 1);
    for (int j = 0; j < 4; ++j) CHECK(u.at(0, j) == doctest::Approx(0.25).epsilon(1e-6));
    auto x = Tensor::from({1, 2}, {0.f, float(std::log(3.0))});
    auto y = O::softmax(x, 1);
    CHECK(y.at(0, 0) == doctest::Approx(0.25).epsilon(1e-6));
    CHECK(y.at(0, 1) == doctest::Approx(0.75).epsilon(1e-6));
}

TEST_CASE("cross entropy approaches zero with a confident logit") {
    auto logits = Tensor::from({1, 2}, {10.f, 0.f});
    auto loss = O::cross_entropy(logits, {0}, -1);
    CHECK(loss.item() == doctest::Approx(std::log1p(std::exp(-10.0))).epsilon(1e-4));
    CHECK(loss.item() < 1e-4);
    CHECK(loss.item() >= 0.0f);
}

TEST_CASE("layer norm hand oracles") {
    auto g = Tensor::filled({2}, 1.0f);
    auto b = Tensor::zeros({2});
    auto c = O::layer_norm(Tensor::filled({1, 2}, 7.0f), g, b);
    CHECK(c.at(0, 0) == doctest::Approx(0.0));
    auto x = Tensor::from({1, 2}, {1.f, 3.f});
    auto y = O::layer_norm(x, g, b, 1e-12);
    CHECK(y.at(0, 0) == doctest::Approx(-1.0).epsilon(1e-5));
    CHECK(y.at(0, 1) == doctest::Approx(1.0).epsilon(1e-5));
}

TEST_CASE("adam leaves parameters unchanged under zero gradient") {
    auto w = Tensor::from({3}, {1.f, -2.f, 0.5f}, true);
    w.zero_grad();
    Adam opt(0.1);
    opt.step({{"w", w}});
    opt.step({{"w", w}});
    CHECK(w.at(0) == 1.0f);
    CHECK(w.at(1) == -2.0f);
    CHECK(w.at(2) == 0.5f);
}

TEST_CASE("adam converges on x^2 from x=5") {
    auto w = Tensor::scalar(5.0f, true);
    Adam opt(0.1);
    for (int i = 0; i < 500; ++i) {
        w.zero_grad();
        w.grad()[0] = 2.0f * w.item();
        opt.step({{"w", w}});
    }
    CHECK(std::abs(w.item()) < 1e-2);
}

TEST_CASE("rng streams are reproducible and serializable") {
    Rng r1(42), r2(42);
    for (int i = 0; i < 100; ++i) CHECK(r1.next_u64() == r2.next_u64());
    auto snap = r1.state();
    std::vector<uint64_t> ahead;
    for (int i = 0; i < 10; ++i) ahead.push_back(r1.next_u64());
    r2.set_state(snap);
    for (int i = 0; i < 10; ++i) CHECK(r2.next_u64() == ahead[size_t(i)]);
    CHECK(Rng::derive(1, "a") != Rng::derive(1, "b"));
    CHECK(Rng::derive(1, "a") != Rng::derive(2, "a"));
}
