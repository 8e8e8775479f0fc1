#include <catch2/catch_amalgamated.hpp>

#include <cmath>

#include "oracles.hpp"
#include "wbx/nn.hpp"
#include "wbx/sgd.hpp"
#include "wbx/tensor.hpp"

using namespace wbx;
using Catch::Approx;

namespace {

template <typename T>
Tensor4<T> random_tensor(int n, int c, int h, int w, Rng& rng, double lo = -1.0, double hi = 1.0) {
  Tensor4<T> t(n, c, h, w);
  for (auto& v : t.data) v = static_cast<T>(rng.uniform(lo, hi));
  return t;
}

template <typename T>
double max_abs_diff(const Tensor4<T>& a, const Tensor4<T>& b) {
  REQUIRE(a.same_dims(b));
  double m = 0.0;
  for (size_t i = 0; i < a.size(); ++i)
    m = std::max(m, std::abs(static_cast<double>(a.data[i]) - static_cast<double>(b.data[i])));
  return m;
}

}  // namespace

TEST_CASE("conv2d identity kernel reproduces the input") {
  Rng rng(11);
  auto x = random_tensor<float>(1, 1, 5, 5, rng);
  Tensor4<float> w(1, 1, 3, 3);
  w.at(0, 0, 1, 1) = 1.0f;
  auto y = conv2d_forward(x, w, std::vector<float>{0.0f});
  CHECK(max_abs_diff(x, y) == 0.0);
}

TEST_CASE("conv2d on zero input emits per-channel bias") {
  Rng rng(12);
  Tensor4<float> x(2, 3, 6, 6);
  auto w = random_tensor<float>(4, 3, 3, 3, rng);
  std::vector<float> b{0.5f, -1.0f, 2.0f, 0.0f};
  auto y = conv2d_forward(x, w, b);
  for (int n = 0; n < 2; ++n)
    for (int co = 0; co < 4; ++co)
      for (int i = 0; i < 36; ++i) CHECK(y.plane(n, co)[i] == b[co]);
}

TEST_CASE("conv2d matches the six-loop oracle on every kernel path") {
  Rng rng(13);
  // spatial sizes chosen to hit the dot (<=64), ikj (<2048) and direct paths
  struct Shape { int n, ci, co, h, w; };
  for (const Shape s : {Shape{1, 2, 4, 4, 4}, Shape{2, 3, 5, 8, 8}, Shape{1, 4, 6, 16, 16},
                        Shape{2, 2, 3, 48, 48}}) {
    auto x = random_tensor<double>(s.n, s.ci, s.h, s.w, rng);
    auto w = random_tensor<double>(s.co, s.ci, 3, 3, rng);
    std::vector<double> b(s.co);
    for (auto& v : b) v = rng.uniform(-1, 1);
    auto got = conv2d_forward(x, w, b);
    auto want = oracle::conv2d_ref(x, w, b);
    for (size_t i = 0; i < got.size(); ++i)
      CHECK(oracle::rel_err(got.data[i], want.data[i]) < 1e-6);
    // 32-bit production path agrees up to float rounding of the same sums
    auto xf = cast_tensor<float>(x);
    auto wf = cast_tensor<float>(w);
    std::vector<float> bf(b.begin(), b.end());
    auto gotf = conv2d_forward(xf, wf, bf);
    for (size_t i = 0; i < gotf.size(); ++i)
      CHECK(std::abs(static_cast<double>(gotf.data[i]) - want.data[i]) < 1e-4);
  }
}

TEST_CASE("conv2d 1x1 kernel matches oracle") {
  Rng rng(14);
  auto x = random_tensor<float>(1, 4, 8, 8, rng);
  auto w = random_tensor<float>(2, 4, 1, 1, rng);
  std::vector<float> b{0.1f, -0.2f};
  auto got = conv2d_forward(x, w, b);
  auto want = oracle::conv2d_ref(x, w, b);
  CHECK(max_abs_diff(got, want) < 1e-6);
}

TEST_CASE("conv2d rejects channel mismatch and non-finite input") {
  Tensor4<float> x(1, 2, 4, 4);
  Tensor4<float> w(1, 3, 3, 3);
  CHECK_THROWS_AS(conv2d_forward(x, w, std::vector<float>{0.0f}), dim_error);
  Tensor4<float> w2(1, 2, 3, 3);
  x.at(0, 1, 2, 2) = std::numeric_limits<float>::quiet_NaN();
  CHECK_THROWS_AS(conv2d_forward(x, w2, std::vector<float>{0.0f}), numeric_error);
}

TEST_CASE("conv2d_transpose tiles non-overlapping stride-2 blocks") {
  Tensor4<float> x(1, 1, 2, 2, 1.0f);
  Tensor4<float> w(1, 1, 2, 2, 1.0f);
  auto y = conv2d_transpose_forward(x, w, std::vector<float>{0.0f});
  REQUIRE(y.h == 4);
  REQUIRE(y.w == 4);
  for (const float v : y.data) CHECK(v == 1.0f);
}

TEST_CASE("conv2d_transpose zero input gives all-bias output") {
  Rng rng(15);
  Tensor4<float> x(1, 3, 4, 4);
  auto w = random_tensor<float>(3, 2, 2, 2, rng);
  std::vector<float> b{0.25f, -0.75f};
  auto y = conv2d_transpose_forward(x, w, b);
  for (int co = 0; co < 2; ++co)
    for (int i = 0; i < 64; ++i) CHECK(y.plane(0, co)[i] == b[co]);
}

TEST_CASE("conv2d_transpose matches the scatter oracle") {
  Rng rng(16);
  auto x = random_tensor<double>(2, 3, 5, 7, rng);
  auto w = random_tensor<double>(3, 4, 2, 2, rng);
  std::vector<double> b(4);
  for (auto& v : b) v = rng.uniform(-1, 1);
  auto got = conv2d_transpose_forward(x, w, b);
  auto want = oracle::conv2d_transpose_ref(x, w, b);
  for (size_t i = 0; i < got.size(); ++i)
    CHECK(oracle::rel_err(got.data[i], want.data[i]) < 1e-6);
}

TEST_CASE("maxpool2 picks window maxima") {
  Tensor4<float> x(1, 1, 2, 2);
  x.at(0, 0, 0, 0) = 1;
  x.at(0, 0, 0, 1) = 2;
  x.at(0, 0, 1, 0) = 3;
  x.at(0, 0, 1, 1) = 4;
  std::vector<int32_t> am;
  auto y = maxpool2_forward(x, am);
  REQUIRE(y.size() == 1);
  CHECK(y.data[0] == 4.0f);

  Tensor4<float> c(2, 3, 4, 4, 7.5f);
  auto yc = maxpool2_forward(c, am);
  for (const float v : yc.data) CHECK(v == 7.5f);
}

TEST_CASE("maxpool2 matches the windowed-loop oracle exactly") {
  Rng rng(17);
  auto x = random_tensor<float>(1, 3, 6, 6, rng);
  std::vector<int32_t> am;
  auto got = maxpool2_forward(x, am);
  auto want = oracle::maxpool2_ref(x);
  CHECK(max_abs_diff(got, want) == 0.0);
}

TEST_CASE("maxpool2 rejects odd spatial dims") {
  Tensor4<float> x(1, 1, 5, 4);
  std::vector<int32_t> am;
  CHECK_THROWS_AS(maxpool2_forward(x, am), dim_error);
}

TEST_CASE("activation values") {
  Tensor4<double> x(1, 1, 1, 1);
  CHECK(sigmoid_forward(x).data[0] == Approx(0.5));
  x.data[0] = std::log(3.0);
  CHECK(sigmoid_forward(x).data[0] == Approx(0.75).epsilon(1e-12));

  Tensor4<double> z(1, 2, 1, 1, 1.7);
  auto p = softmax_forward(z);
  CHECK(p.data[0] == Approx(0.5));
  CHECK(p.data[1] == Approx(0.5));

  Tensor4<double> r(1, 1, 1, 3);
  r.data = {-1.0, 0.0, 2.5};
  auto rr = relu_forward(r);
  CHECK(rr.data[0] == 0.0);
  CHECK(rr.data[1] == 0.0);
  CHECK(rr.data[2] == 2.5);
}

TEST_CASE("softmax rows sum to one") {
  Rng rng(18);
  auto x = random_tensor<double>(3, 5, 2, 2, rng, -30.0, 30.0);
  auto p = softmax_forward(x);
  for (int n = 0; n < 3; ++n)
    for (int j = 0; j < 4; ++j) {
      double s = 0.0;
      for (int c = 0; c < 5; ++c) s += p.plane(n, c)[j];
      CHECK(s == Approx(1.0).epsilon(1e-6));
    }
}

TEST_CASE("batchnorm2d train mode normalizes per channel") {
  Rng rng(19);
  auto x = random_tensor<float>(4, 3, 8, 8, rng, -3.0, 5.0);
  std::vector<float> gamma(3, 1.0f), beta(3, 0.0f), rm(3, 0.0f), rv(3, 1.0f);
  auto y = batchnorm2d_forward(x, gamma, beta, rm, rv, Mode::train);
  const int m = 4 * 64;
  for (int c = 0; c < 3; ++c) {
    double mu = 0.0, var = 0.0;
    for (int n = 0; n < 4; ++n)
      for (int j = 0; j < 64; ++j) mu += y.plane(n, c)[j];
    mu /= m;
    for (int n = 0; n < 4; ++n)
      for (int j = 0; j < 64; ++j) {
        const double d = y.plane(n, c)[j] - mu;
        var += d * d;
      }
    var /= m;
    CHECK(std::abs(mu) < 1e-5);
    CHECK(var == Approx(1.0).margin(1e-4));
  }
}

TEST_CASE("batchnorm2d gamma=0 yields all-beta output") {
  Rng rng(20);
  auto x = random_tensor<float>(2, 2, 4, 4, rng);
  std::vector<float> gamma(2, 0.0f), beta{1.5f, -2.0f}, rm(2, 0.0f), rv(2, 1.0f);
  auto y = batchnorm2d_forward(x, gamma, beta, rm, rv, Mode::train);
  for (int n = 0; n < 2; ++n)
    for (int c = 0; c < 2; ++c)
      for (int j = 0; j < 16; ++j) CHECK(y.plane(n, c)[j] == beta[c]);
}

TEST_CASE("batchnorm2d eval mode applies the stored-stats formula") {
  Rng rng(21);
  auto x = random_tensor<double>(1, 2, 4, 4, rng);
  std::vector<double> gamma{1.3, 0.7}, beta{0.2, -0.4}, rm{0.5, -1.0}, rv{2.0, 0.5};
  auto y = batchnorm2d_forward(x, gamma, beta, rm, rv, Mode::eval);
  const double eps = 1e-5;
  for (int c = 0; c < 2; ++c)
    for (int j = 0; j < 16; ++j) {
      const double want = (x.plane(0, c)[j] - rm[c]) / std::sqrt(rv[c] + eps) * gamma[c] + beta[c];
      CHECK(y.plane(0, c)[j] == Approx(want).epsilon(1e-6));
    }
}

TEST_CASE("batchnorm2d rejects a single spatial-batch element in train mode") {
  Tensor4<float> x(1, 3, 1, 1, 1.0f);
  std::vector<float> gamma(3, 1.0f), beta(3, 0.0f), rm(3, 0.0f), rv(3, 1.0f);
  CHECK_THROWS_AS(batchnorm2d_forward(x, gamma, beta, rm, rv, Mode::train), numeric_error);
}

TEST_CASE("dropout identity cases") {
  Rng rng(22);
  auto x = random_tensor<float>(2, 3, 4, 4, rng);
  Rng r1(1);
  CHECK(max_abs_diff(dropout_forward(x, 0.0, Mode::train, r1), x) == 0.0);
  CHECK(max_abs_diff(dropout_forward(x, 0.7, Mode::eval, r1), x) == 0.0);
  CHECK(max_abs_diff(dropout2d_forward(x, 0.0, Mode::train, r1), x) == 0.0);
  CHECK(max_abs_diff(dropout2d_forward(x, 0.7, Mode::eval, r1), x) == 0.0);
  CHECK_THROWS_AS(dropout_forward(x, 1.0, Mode::train, r1), config_error);
  CHECK_THROWS_AS(dropout_forward(x, -0.1, Mode::train, r1), config_error);
}

TEST_CASE("dropout train-mode statistics over many elements") {
  const int n_elem = 100000;
  Tensor4<double> x(1, 1, 250, 400, 1.0);
  double survivors = 0.0, mean_sum = 0.0;
  const int n_seeds = 10;
  for (int s = 0; s < n_seeds; ++s) {
    Rng rng(1000 + s);
    auto y = dropout_forward(x, 0.5, Mode::train, rng);
    for (const double v : y.data) {
      if (v != 0.0) survivors += 1.0;
      mean_sum += v;
    }
  }
  const double total = static_cast<double>(n_elem) * n_seeds;
  const double frac = survivors / total;
  // 3-sigma binomial bound around p=0.5
  const double sigma = std::sqrt(0.25 / total);
  CHECK(std::abs(frac - 0.5) < 3.0 * sigma);
  // E[output] = input within 2%
  CHECK(mean_sum / total == Approx(1.0).margin(0.02));
}

TEST_CASE("dropout2d zeroes whole channel planes") {
  Tensor4<float> x(4, 8, 6, 6, 1.0f);
  Rng rng(77);
  Tensor4<float> mask;
  auto y = dropout2d_forward(x, 0.5, Mode::train, rng, &mask);
  for (int n = 0; n < 4; ++n)
    for (int c = 0; c < 8; ++c) {
      const float first = y.plane(n, c)[0];
      CHECK((first == 0.0f || first == 2.0f));
      for (int j = 0; j < 36; ++j) CHECK(y.plane(n, c)[j] == first);
    }
}

TEST_CASE("global_avg_pool values") {
  Tensor4<float> c7(1, 1, 3, 3, 7.0f);
  CHECK(global_avg_pool_forward(c7).data[0] == 7.0f);

  Tensor4<float> q(1, 1, 2, 2);
  q.data = {0.0f, 2.0f, 4.0f, 6.0f};
  CHECK(global_avg_pool_forward(q).data[0] == Approx(3.0));

  Tensor4<float> big(1, 512, 12, 12, 0.25f);
  auto v = global_avg_pool_forward(big);
  REQUIRE(v.c == 512);
  REQUIRE(v.size() == 512);
}

TEST_CASE("linear layer values and oracle") {
  Rng rng(23);
  Tensor4<float> eye(3, 3, 1, 1);
  Tensor4<float> w_eye(3, 3, 1, 1);
  for (int i = 0; i < 3; ++i) w_eye.at(i, i, 0, 0) = 1.0f;
  auto x = random_tensor<float>(3, 3, 1, 1, rng);
  auto y = linear_forward(x, w_eye, std::vector<float>(3, 0.0f));
  CHECK(max_abs_diff(x, y) == 0.0);

  Tensor4<float> w0(2, 3, 1, 1);
  std::vector<float> b{0.5f, -4.0f};
  auto yb = linear_forward(x, w0, b);
  for (int n = 0; n < 3; ++n) {
    CHECK(yb.at(n, 0, 0, 0) == b[0]);
    CHECK(yb.at(n, 1, 0, 0) == b[1]);
  }

  auto w = random_tensor<float>(2, 3, 1, 1, rng);
  auto got = linear_forward(x, w, b);
  auto want = oracle::linear_ref(x, w, b);
  CHECK(max_abs_diff(got, want) < 1e-6);

  Tensor4<float> bad(1, 4, 1, 1);
  CHECK_THROWS_AS(linear_forward(bad, w, b), dim_error);
}

TEST_CASE("sgd_step hand cases") {
  Param<double> p("theta", 1, 1, 1, 1);

  SECTION("lr = 0 leaves params unchanged") {
    p.value.data[0] = 1.0;
    p.grad.data[0] = 2.0;
    SgdState<double> st(0.0, 0.9, 1e-3);
    sgd_step<double>({&p}, st);
    CHECK(p.value.data[0] == 1.0);
  }

  SECTION("plain gradient step") {
    p.value.data[0] = 1.0;
    p.grad.data[0] = 2.0;
    SgdState<double> st(0.1, 0.0, 0.0);
    sgd_step<double>({&p}, st);
    CHECK(p.value.data[0] == Approx(0.8).epsilon(1e-12));
  }

  SECTION("two momentum steps on f(theta) = theta^2 match a scripted oracle") {
    p.value.data[0] = 1.0;
    SgdState<double> st(0.1, 0.9, 0.0);
    // oracle: v=0; repeat { g=2*theta; v=0.9*v+g; theta-=0.1*v; }
    double theta_ref = 1.0, v_ref = 0.0;
    for (int step = 0; step < 2; ++step) {
      p.grad.data[0] = 2.0 * p.value.data[0];
      const double g = 2.0 * theta_ref;
      v_ref = 0.9 * v_ref + g;
      theta_ref -= 0.1 * v_ref;
      sgd_step<double>({&p}, st);
    }
    CHECK(std::abs(p.value.data[0] - theta_ref) < 1e-9);
  }

  SECTION("non-finite gradient aborts naming the parameter") {
    p.value.data[0] = 1.0;
    p.grad.data[0] = std::numeric_limits<double>::infinity();
    SgdState<double> st(0.1, 0.9, 0.0);
    try {
      sgd_step<double>({&p}, st);
      FAIL("expected numeric_error");
    } catch (const numeric_error& e) {
      CHECK(std::string(e.what()).find("theta") != std::string::npos);
    }
  }
}

TEST_CASE("sgd monotonically descends a 1-D quadratic without momentum") {
  Param<double> p("q", 1, 1, 1, 1);
  p.value.data[0] = 1.0;
  SgdState<double> st(0.1, 0.0, 0.0);
  double prev = p.value.data[0] * p.value.data[0];
  for (int i = 0; i < 100; ++i) {
    p.grad.data[0] = 2.0 * p.value.data[0];
    sgd_step<double>({&p}, st);
    const double f = p.value.data[0] * p.value.data[0];
    CHECK(f < prev);
    prev = f;
  }
}

TEST_CASE("shape algebra: conv preserves, pool halves, transpose doubles") {
  Rng rng(24);
  auto x = random_tensor<float>(1, 4, 32, 32, rng);
  auto wconv = random_tensor<float>(6, 4, 3, 3, rng, -0.2, 0.2);
  auto y = conv2d_forward(x, wconv, std::vector<float>(6, 0.0f));
  CHECK(y.h == 32);
  CHECK(y.w == 32);

  std::vector<int32_t> am;
  auto pooled = maxpool2_forward(y, am);
  CHECK(pooled.h == 16);
  CHECK(pooled.w == 16);

  auto wup = random_tensor<float>(6, 4, 2, 2, rng, -0.2, 0.2);
  auto up = conv2d_transpose_forward(pooled, wup, std::vector<float>(4, 0.0f));
  CHECK(up.h == 32);
  CHECK(up.w == 32);
}

TEST_CASE("fixed seed gives bit-identical dropout masks and init") {
  Tensor4<float> x(2, 4, 8, 8, 1.0f);
  Rng a(99), b(99);
  Tensor4<float> ma, mb;
  auto ya = dropout_forward(x, 0.3, Mode::train, a, &ma);
  auto yb = dropout_forward(x, 0.3, Mode::train, b, &mb);
  CHECK(max_abs_diff(ya, yb) == 0.0);
  CHECK(max_abs_diff(ma, mb) == 0.0);

  Rng ia(123), ib(123);
  Param<float> pa("p", 4, 3, 3, 3), pb("p", 4, 3, 3, 3);
  pa.init_he_uniform(ia, 27);
  pb.init_he_uniform(ib, 27);
  CHECK(max_abs_diff(pa.value, pb.value) == 0.0);
}

TEST_CASE("zero_grad clears gradients exactly") {
  Param<float> p("p", 2, 2, 2, 2);
  for (auto& g : p.grad.data) g = 1.5f;
  p.zero_grad();
  for (const float g : p.grad.data) CHECK(g == 0.0f);
}
