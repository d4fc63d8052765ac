#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <functional>
#include <vector>

#include "semtrack/nn_ops.hpp"
#include "semtrack/rng.hpp"

using namespace semtrack;
using nn::adam_step;
using nn::AdamStateT;

namespace {

// Independent naive references, deliberately written as the plainest
// possible loops so they share no structure with the fast paths.

TensorD ref_conv3x3(const TensorD& in, const std::vector<double>& k,
                    const std::vector<double>& bias, int cout) {
  TensorD out(in.h, in.w, cout);
  for (int y = 0; y < in.h; ++y)
    for (int x = 0; x < in.w; ++x)
      for (int co = 0; co < cout; ++co) {
        double s = bias.empty() ? 0.0 : bias[co];
        for (int ky = 0; ky < 3; ++ky)
          for (int kx = 0; kx < 3; ++kx) {
            const int iy = y + ky - 1, ix = x + kx - 1;
            if (iy < 0 || iy >= in.h || ix < 0 || ix >= in.w) continue;
            for (int ci = 0; ci < in.c; ++ci)
              s += in(iy, ix, ci) *
                   k[((static_cast<size_t>(ky) * 3 + kx) * in.c + ci) * cout + co];
          }
        out(y, x, co) = s;
      }
  return out;
}

// scatter-form transposed conv: each input pixel adds kernel x value into
// the 2h x 2w nominal region; extra target row/col stays zero
TensorD ref_deconv(const TensorD& in, const std::vector<double>& k, int cout,
                   int th, int tw) {
  TensorD out(th, tw, cout);
  out.fill(0.0);
  for (int y = 0; y < in.h; ++y)
    for (int x = 0; x < in.w; ++x)
      for (int ky = 0; ky < 4; ++ky)
        for (int kx = 0; kx < 4; ++kx) {
          const int oy = 2 * y - 1 + ky, ox = 2 * x - 1 + kx;
          if (oy < 0 || oy >= 2 * in.h || ox < 0 || ox >= 2 * in.w) continue;
          for (int ci = 0; ci < in.c; ++ci)
            for (int co = 0; co < cout; ++co)
              out(oy, ox, co) +=
                  in(y, x, ci) *
                  k[((static_cast<size_t>(ky) * 4 + kx) * in.c + ci) * cout + co];
        }
  return out;
}

// stride-2 pad-1 4x4 convolution (the downsampling op deconv is adjoint to)
TensorD ref_conv4x4_s2(const TensorD& in, const std::vector<double>& k, int cout) {
  const int oh = in.h / 2, ow = in.w / 2;
  TensorD out(oh, ow, cout);
  out.fill(0.0);
  for (int y = 0; y < oh; ++y)
    for (int x = 0; x < ow; ++x)
      for (int ky = 0; ky < 4; ++ky)
        for (int kx = 0; kx < 4; ++kx) {
          const int iy = 2 * y - 1 + ky, ix = 2 * x - 1 + kx;
          if (iy < 0 || iy >= in.h || ix < 0 || ix >= in.w) continue;
          for (int ci = 0; ci < in.c; ++ci)
            for (int co = 0; co < cout; ++co)
              out(y, x, co) +=
                  in(iy, ix, ci) *
                  k[((static_cast<size_t>(ky) * 4 + kx) * in.c + ci) * cout + co];
        }
  return out;
}

TensorD random_tensor(Rng& rng, int h, int w, int c, double scale = 1.0) {
  TensorD t(h, w, c);
  for (auto& v : t.data) v = rng.normal() * scale;
  return t;
}

std::vector<double> random_vec(Rng& rng, size_t n, double scale = 1.0) {
  std::vector<double> v(n);
  for (auto& x : v) x = rng.normal() * scale;
  return v;
}

double rel_err(double a, double b) {
  return std::abs(a - b) / std::max({1.0, std::abs(a), std::abs(b)});
}

double max_rel_err(const TensorD& a, const TensorD& b) {
  REQUIRE(a.same_shape(b));
  double m = 0.0;
  for (size_t i = 0; i < a.size(); ++i) m = std::max(m, rel_err(a.data[i], b.data[i]));
  return m;
}

double dot(const TensorD& a, const TensorD& b) {
  REQUIRE(a.same_shape(b));
  double s = 0.0;
  for (size_t i = 0; i < a.size(); ++i) s += a.data[i] * b.data[i];
  return s;
}

// central finite differences of a scalar function over a flat buffer
std::vector<double> fd_grad(std::vector<double>& x,
                            const std::function<double()>& eval, double h = 1e-5) {
  std::vector<double> g(x.size());
  for (size_t i = 0; i < x.size(); ++i) {
    const double keep = x[i];
    x[i] = keep + h;
    const double fp = eval();
    x[i] = keep - h;
    const double fm = eval();
    x[i] = keep;
    g[i] = (fp - fm) / (2.0 * h);
  }
  return g;
}

double max_rel_err_vec(const std::vector<double>& a, const std::vector<double>& b) {
  REQUIRE(a.size() == b.size());
  double m = 0.0;
  for (size_t i = 0; i < a.size(); ++i) m = std::max(m, rel_err(a[i], b[i]));
  return m;
}

}  // namespace

TEST_CASE("conv3x3 forward matches naive reference") {
  Rng rng(101);
  for (int inst = 0; inst < 20; ++inst) {
    const int h = 1 + rng.uniform_int(9);
    const int w = 1 + rng.uniform_int(12);
    const int cin = 1 + rng.uniform_int(5);
    const int couts[] = {1, 3, 7, 16, 17, 32, 48};
    const int cout = couts[rng.uniform_int(7)];
    TensorD in = random_tensor(rng, h, w, cin);
    auto k = random_vec(rng, static_cast<size_t>(9) * cin * cout);
    auto b = random_vec(rng, cout);
    TensorD out;
    nn::conv3x3_forward(in, k.data(), b.data(), cout, out);
    TensorD ref = ref_conv3x3(in, k, b, cout);
    CHECK(max_rel_err(out, ref) < 1e-12);
  }
}

TEST_CASE("conv3x3 backward gradient check") {
  Rng rng(202);
  double worst = 0.0;
  for (int inst = 0; inst < 20; ++inst) {
    const int h = 2 + rng.uniform_int(5);
    const int w = 2 + rng.uniform_int(6);
    const int cin = 1 + rng.uniform_int(3);
    const int cout = 1 + rng.uniform_int(5);
    TensorD in = random_tensor(rng, h, w, cin);
    auto k = random_vec(rng, static_cast<size_t>(9) * cin * cout);
    auto b = random_vec(rng, cout);
    TensorD proj = random_tensor(rng, h, w, cout);  // J = <conv(in), proj>

    const auto eval = [&] {
      TensorD out;
      nn::conv3x3_forward(in, k.data(), b.data(), cout, out);
      return dot(out, proj);
    };

    TensorD d_in;
    std::vector<double> d_k(k.size()), d_b(b.size());
    nn::conv3x3_backward(in, k.data(), cout, proj, &d_in, d_k.data(), d_b.data());

    auto fd_in = fd_grad(in.data, eval);
    auto fd_k = fd_grad(k, eval);
    auto fd_b = fd_grad(b, eval);
    worst = std::max(worst, max_rel_err_vec(d_in.data, fd_in));
    worst = std::max(worst, max_rel_err_vec(d_k, fd_k));
    worst = std::max(worst, max_rel_err_vec(d_b, fd_b));
  }
  CHECK(worst < 1e-4);
  MESSAGE("conv3x3 worst gradient rel err: ", worst);
}

TEST_CASE("deconv forward matches scatter reference, odd and even targets") {
  Rng rng(303);
  for (int inst = 0; inst < 20; ++inst) {
    const int h = 1 + rng.uniform_int(5);
    const int w = 1 + rng.uniform_int(5);
    const int cin = 1 + rng.uniform_int(4);
    const int cout = 1 + rng.uniform_int(6);
    const int th = 2 * h + rng.uniform_int(2);
    const int tw = 2 * w + rng.uniform_int(2);
    TensorD in = random_tensor(rng, h, w, cin);
    auto k = random_vec(rng, static_cast<size_t>(16) * cin * cout);
    TensorD out;
    nn::deconv4x4s2_forward(in, k.data(), cout, th, tw, out);
    TensorD ref = ref_deconv(in, k, cout, th, tw);
    CHECK(max_rel_err(out, ref) < 1e-12);
    if (th == 2 * h + 1)
      for (int x = 0; x < tw; ++x)
        for (int c = 0; c < cout; ++c) CHECK(out(th - 1, x, c) == 0.0);
  }
}

TEST_CASE("deconv is the adjoint of the matching strided conv") {
  // <conv4x4_s2(crop_even(x)), y> == <x, deconv(y, shape(x))>
  Rng rng(404);
  for (int inst = 0; inst < 20; ++inst) {
    const int h = 1 + rng.uniform_int(5);
    const int w = 1 + rng.uniform_int(5);
    const int cin = 1 + rng.uniform_int(4);   // deconv input channels
    const int cout = 1 + rng.uniform_int(4);  // deconv output channels
    const int th = 2 * h + rng.uniform_int(2);
    const int tw = 2 * w + rng.uniform_int(2);
    TensorD x = random_tensor(rng, th, tw, cout);
    TensorD y = random_tensor(rng, h, w, cin);
    auto k = random_vec(rng, static_cast<size_t>(16) * cin * cout);

    TensorD xc(2 * h, 2 * w, cout);
    for (int yy = 0; yy < 2 * h; ++yy)
      for (int xx = 0; xx < 2 * w; ++xx)
        for (int c = 0; c < cout; ++c) xc(yy, xx, c) = x(yy, xx, c);

    // conv kernel indexed (ky,kx,cout,cin): transpose channel dims of k
    std::vector<double> kt(k.size());
    for (int ky = 0; ky < 4; ++ky)
      for (int kx = 0; kx < 4; ++kx)
        for (int ci = 0; ci < cin; ++ci)
          for (int co = 0; co < cout; ++co)
            kt[((static_cast<size_t>(ky) * 4 + kx) * cout + co) * cin + ci] =
                k[((static_cast<size_t>(ky) * 4 + kx) * cin + ci) * cout + co];

    TensorD down = ref_conv4x4_s2(xc, kt, cin);
    TensorD up;
    nn::deconv4x4s2_forward(y, k.data(), cout, th, tw, up);
    const double lhs = dot(down, y);
    const double rhs = dot(x, up);
    CHECK(rel_err(lhs, rhs) < 1e-10);
  }
}

TEST_CASE("deconv backward gradient check") {
  Rng rng(505);
  double worst = 0.0;
  for (int inst = 0; inst < 20; ++inst) {
    const int h = 1 + rng.uniform_int(4);
    const int w = 1 + rng.uniform_int(4);
    const int cin = 1 + rng.uniform_int(3);
    const int cout = 1 + rng.uniform_int(4);
    const int th = 2 * h + rng.uniform_int(2);
    const int tw = 2 * w + rng.uniform_int(2);
    TensorD in = random_tensor(rng, h, w, cin);
    auto k = random_vec(rng, static_cast<size_t>(16) * cin * cout);
    TensorD proj = random_tensor(rng, th, tw, cout);

    const auto eval = [&] {
      TensorD out;
      nn::deconv4x4s2_forward(in, k.data(), cout, th, tw, out);
      return dot(out, proj);
    };

    TensorD d_in;
    std::vector<double> d_k(k.size());
    nn::deconv4x4s2_backward(in, k.data(), cout, proj, &d_in, d_k.data());
    worst = std::max(worst, max_rel_err_vec(d_in.data, fd_grad(in.data, eval)));
    worst = std::max(worst, max_rel_err_vec(d_k, fd_grad(k, eval)));
  }
  CHECK(worst < 1e-4);
  MESSAGE("deconv worst gradient rel err: ", worst);
}

TEST_CASE("maxpool forward reference and backward gradient check") {
  Rng rng(606);
  for (int inst = 0; inst < 20; ++inst) {
    const int h = 2 + rng.uniform_int(6);
    const int w = 2 + rng.uniform_int(6);
    const int c = 1 + rng.uniform_int(4);
    TensorD in = random_tensor(rng, h, w, c);
    TensorD out;
    std::vector<int32_t> argmax;
    nn::maxpool2x2_forward(in, out, argmax);
    CHECK(out.h == h / 2);
    CHECK(out.w == w / 2);

    for (int y = 0; y < out.h; ++y)
      for (int x = 0; x < out.w; ++x)
        for (int ch = 0; ch < c; ++ch) {
          double m = -1e300;
          for (int dy = 0; dy < 2; ++dy)
            for (int dx = 0; dx < 2; ++dx)
              m = std::max(m, in(2 * y + dy, 2 * x + dx, ch));
          CHECK(out(y, x, ch) == doctest::Approx(m).epsilon(1e-14));
        }

    TensorD proj = random_tensor(rng, out.h, out.w, c);
    const auto eval = [&] {
      TensorD o;
      std::vector<int32_t> am;
      nn::maxpool2x2_forward(in, o, am);
      return dot(o, proj);
    };
    TensorD d_in;
    nn::maxpool2x2_backward(h, w, c, argmax, proj, d_in);
    CHECK(max_rel_err_vec(d_in.data, fd_grad(in.data, eval)) < 1e-4);
  }
}

TEST_CASE("relu forward and backward") {
  Rng rng(707);
  for (int inst = 0; inst < 20; ++inst) {
    TensorD in = random_tensor(rng, 4, 5, 3);
    for (auto& v : in.data)
      if (std::abs(v) < 0.01) v = 0.05;  // keep FD away from the kink
    TensorD out;
    nn::relu_forward(in, out);
    for (size_t i = 0; i < in.size(); ++i)
      CHECK(out.data[i] == std::max(0.0, in.data[i]));

    TensorD proj = random_tensor(rng, 4, 5, 3);
    const auto eval = [&] {
      TensorD o;
      nn::relu_forward(in, o);
      return dot(o, proj);
    };
    TensorD d_in;
    nn::relu_backward(in, proj, d_in);
    CHECK(max_rel_err_vec(d_in.data, fd_grad(in.data, eval)) < 1e-4);
  }
}

TEST_CASE("softmax frozen value, normalization, and input validation") {
  TensorD logits(1, 1, 7);
  logits.fill(0.0);
  logits(0, 0, 0) = 10.0;
  TensorD p = nn::softmax_pixelwise(logits);
  CHECK(p(0, 0, 0) == doctest::Approx(0.9997276746027486).epsilon(1e-12));
  CHECK(p(0, 0, 1) == doctest::Approx(4.538756620857709e-05).epsilon(1e-12));

  Rng rng(808);
  TensorD l = random_tensor(rng, 3, 4, 7, 2.0);
  TensorD q = nn::softmax_pixelwise(l);
  for (int y = 0; y < 3; ++y)
    for (int x = 0; x < 4; ++x) {
      double s = 0.0;
      for (int c = 0; c < 7; ++c) {
        CHECK(q(y, x, c) > 0.0);
        s += q(y, x, c);
      }
      CHECK(s == doctest::Approx(1.0).epsilon(1e-12));
    }

  // invariance under per-pixel shifts
  TensorD shifted = l;
  for (int y = 0; y < 3; ++y)
    for (int x = 0; x < 4; ++x)
      for (int c = 0; c < 7; ++c) shifted(y, x, c) += 100.0 * (y + x);
  CHECK(max_rel_err(nn::softmax_pixelwise(shifted), q) < 1e-12);

  TensorD bad(1, 1, 7);
  bad.fill(std::numeric_limits<double>::quiet_NaN());
  CHECK_THROWS_AS((void)nn::softmax_pixelwise(bad), std::invalid_argument);
}

TEST_CASE("segmentation loss frozen values") {
  // single background pixel with p_bg = 0.5, lambda = 1: H = M = ln 2
  TensorD p(1, 1, 7);
  p.fill(0.1);
  p(0, 0, 0) = 0.5;  // remaining mass is irrelevant to the value under test
  LabelMap truth(1, 1);
  truth.at(0, 0) = 0;
  auto r = nn::segmentation_loss(p, truth, 1.0);
  CHECK(r.loss == doctest::Approx(1.3862943611198906).epsilon(1e-9));

  // single body pixel, p_true = 0.5, p_bg = 0.25, lambda = 2:
  // L = -log 0.5 - 2 log 0.75
  TensorD p2(1, 1, 7);
  p2.fill(0.05);
  p2(0, 0, 0) = 0.25;
  p2(0, 0, 3) = 0.5;
  LabelMap t2(1, 1);
  t2.at(0, 0) = 3;
  auto r2 = nn::segmentation_loss(p2, t2, 2.0);
  CHECK(r2.loss == doctest::Approx(1.2685113254635071).epsilon(1e-9));

  // two-pixel map through the real softmax, lambda = 0.5, frozen end to end
  TensorD logits(1, 2, 7);
  logits.fill(0.0);
  logits(0, 0, 0) = 2.0;
  logits(0, 1, 1) = 3.0;
  LabelMap t3(1, 2);
  t3.at(0, 0) = 0;
  t3.at(0, 1) = 1;
  auto r3 = nn::segmentation_loss(nn::softmax_pixelwise(logits), t3, 0.5);
  CHECK(r3.loss == doctest::Approx(0.5862911476062158).epsilon(1e-10));
  CHECK(r3.d_logits(0, 0, 0) == doctest::Approx(-0.3360953876621225).epsilon(1e-10));
  CHECK(r3.d_logits(0, 0, 1) == doctest::Approx(0.056015897943687026).epsilon(1e-10));
  CHECK(r3.d_logits(0, 1, 0) == doctest::Approx(0.02875156460104598).epsilon(1e-10));
  CHECK(r3.d_logits(0, 1, 1) == doctest::Approx(-0.12267987812328067).epsilon(1e-10));

  // perfect prediction -> loss ~ 0 (clamped at 1 - 1e-7)
  TensorD pp(2, 2, 7);
  pp.fill(0.0);
  LabelMap tp(2, 2);
  for (int y = 0; y < 2; ++y)
    for (int x = 0; x < 2; ++x) {
      tp.at(y, x) = static_cast<uint8_t>(1 + y);
      pp(y, x, 1 + y) = 1.0;
    }
  CHECK(nn::segmentation_loss(pp, tp, 1.0).loss < 1e-5);
}

TEST_CASE("segmentation loss properties: lambda=0 is plain CE, duplication invariant") {
  Rng rng(909);
  for (int inst = 0; inst < 20; ++inst) {
    TensorD logits = random_tensor(rng, 4, 5, 7, 1.5);
    LabelMap truth(4, 5);
    for (auto& v : truth.v) v = static_cast<uint8_t>(rng.uniform_int(7));
    TensorD probs = nn::softmax_pixelwise(logits);
    auto r = nn::segmentation_loss(probs, truth, 0.0);
    CHECK(r.loss >= 0.0);

    double ce = 0.0;
    for (int y = 0; y < 4; ++y)
      for (int x = 0; x < 5; ++x) ce += -std::log(probs(y, x, truth.at(y, x)));
    ce /= 20.0;
    CHECK(r.loss == doctest::Approx(ce).epsilon(1e-12));

    // duplicating every pixel leaves the mean unchanged
    TensorD dup(4, 10, 7);
    LabelMap dupt(4, 10);
    for (int y = 0; y < 4; ++y)
      for (int x = 0; x < 10; ++x) {
        dupt.at(y, x) = truth.at(y, x % 5);
        for (int c = 0; c < 7; ++c) dup(y, x, c) = probs(y, x % 5, c);
      }
    auto rd = nn::segmentation_loss(dup, dupt, 0.0);
    CHECK(rd.loss == doctest::Approx(r.loss).epsilon(1e-12));
  }

  TensorD p(1, 1, 7);
  p.fill(1.0 / 7.0);
  LabelMap t(1, 1);
  t.at(0, 0) = 2;
  CHECK(nn::segmentation_loss(p, t, 0.0).loss ==
        doctest::Approx(1.9459101490553135).epsilon(1e-12));
  CHECK_THROWS_AS((void)nn::segmentation_loss(p, t, -0.5), std::invalid_argument);
}

TEST_CASE("fused softmax + loss gradient check") {
  Rng rng(1111);
  double worst = 0.0;
  for (int inst = 0; inst < 20; ++inst) {
    const int h = 2 + rng.uniform_int(3);
    const int w = 2 + rng.uniform_int(4);
    TensorD logits = random_tensor(rng, h, w, 7, 1.2);
    LabelMap truth(h, w);
    for (auto& v : truth.v) v = static_cast<uint8_t>(rng.uniform_int(7));
    const double lambda = rng.uniform(0.0, 3.0);

    const auto eval = [&] {
      return nn::segmentation_loss(nn::softmax_pixelwise(logits), truth, lambda).loss;
    };
    auto r = nn::segmentation_loss(nn::softmax_pixelwise(logits), truth, lambda);
    worst = std::max(worst, max_rel_err_vec(r.d_logits.data, fd_grad(logits.data, eval)));
  }
  CHECK(worst < 1e-4);
  MESSAGE("loss worst gradient rel err: ", worst);
}

TEST_CASE("adam frozen trajectories and basic contracts") {
  // constant gradient 0.3 from w0 = 0.5, default hyperparameters
  {
    std::vector<double> w{0.5};
    AdamStateT<double> s(1);
    std::vector<double> g{0.3};
    std::vector<double> expect_at{0.49900000003333334, 0.49800000006666667,
                                  0.4950000001666667, 0.49000000033333335};
    const int steps_at[] = {1, 2, 5, 10};
    int e = 0;
    for (int t = 1; t <= 10; ++t) {
      adam_step(w, g, s);
      if (e < 4 && t == steps_at[e]) {
        CHECK(w[0] == doctest::Approx(expect_at[e]).epsilon(1e-12));
        ++e;
      }
    }
    CHECK(s.t == 10);
  }

  // gradient 2w (descent on w^2) from w0 = 1 at lr = 0.1: |w| shrinks to
  // step 11 then momentum overshoots past zero and |w| grows again
  {
    std::vector<double> w{1.0};
    AdamStateT<double> s(1);
    s.lr = 0.1;
    std::vector<double> hist;
    for (int t = 1; t <= 20; ++t) {
      std::vector<double> g{2.0 * w[0]};
      adam_step(w, g, s);
      hist.push_back(w[0]);
    }
    CHECK(hist[0] == doctest::Approx(0.9000000005).epsilon(1e-12));
    CHECK(hist[1] == doctest::Approx(0.8004122286917927).epsilon(1e-12));
    CHECK(hist[4] == doctest::Approx(0.5079636592643417).epsilon(1e-12));
    CHECK(hist[9] == doctest::Approx(0.07624915560691176).epsilon(1e-10));
    CHECK(hist[10] == doctest::Approx(0.005131501948056727).epsilon(1e-8));
    CHECK(hist[11] == doctest::Approx(-0.05893789063004774).epsilon(1e-8));
    CHECK(hist[19] == doctest::Approx(-0.2711540954901284).epsilon(1e-8));
    for (int t = 1; t <= 10; ++t) CHECK(std::abs(hist[t]) < std::abs(hist[t - 1]));
    CHECK(hist[10] > 0.0);
    CHECK(hist[11] < 0.0);
  }

  // zero gradient: params unchanged, step counter advances
  {
    std::vector<double> w{0.25, -1.5};
    AdamStateT<double> s(2);
    std::vector<double> g{0.0, 0.0};
    adam_step(w, g, s);
    CHECK(w[0] == 0.25);
    CHECK(w[1] == -1.5);
    CHECK(s.t == 1);
  }

  // first step moves by ~ -lr * sign(g)
  {
    std::vector<double> w{0.7};
    AdamStateT<double> s(1);
    std::vector<double> g{0.2};
    adam_step(w, g, s);
    CHECK(w[0] == doctest::Approx(0.7 - 1e-3).epsilon(1e-6));
  }

  // shape mismatch rejected
  {
    std::vector<double> w{1.0, 2.0};
    AdamStateT<double> s(1);
    std::vector<double> g{0.1, 0.1};
    CHECK_THROWS_AS(adam_step(w, g, s), std::invalid_argument);
  }
}

TEST_CASE("float fast path agrees with double path on network-sized shapes") {
  // exercises the blocked interior kernels (cout multiples of 16/64) against
  // the same computation done in double
  Rng rng(1212);
  const int h = 13, w = 16, cin = 24, cout = 80;
  TensorD ind = random_tensor(rng, h, w, cin, 0.5);
  auto kd = random_vec(rng, static_cast<size_t>(9) * cin * cout, 0.1);
  auto bd = random_vec(rng, cout, 0.1);

  Tensor inf(h, w, cin);
  std::vector<float> kf(kd.size()), bf(bd.size());
  for (size_t i = 0; i < ind.size(); ++i) inf.data[i] = static_cast<float>(ind.data[i]);
  for (size_t i = 0; i < kd.size(); ++i) kf[i] = static_cast<float>(kd[i]);
  for (size_t i = 0; i < bd.size(); ++i) bf[i] = static_cast<float>(bd[i]);

  TensorD outd;
  Tensor outf;
  nn::conv3x3_forward(ind, kd.data(), bd.data(), cout, outd);
  nn::conv3x3_forward(inf, kf.data(), bf.data(), cout, outf);
  double worst = 0.0;
  for (size_t i = 0; i < outd.size(); ++i)
    worst = std::max(worst, rel_err(outd.data[i], static_cast<double>(outf.data[i])));
  CHECK(worst < 1e-3);
}
