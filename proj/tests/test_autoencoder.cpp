#include <gtest/gtest.h>

#include "temp_dir.hpp"
#include "xsim/autoencoder.hpp"

namespace xsim {
namespace {

using ae::Mat;

PatchMatrix random_patches(int n, int p, std::uint64_t seed) {
  PatchMatrix X(n, p * p);
  Stream rng(seed, "x");
  for (Eigen::Index i = 0; i < X.size(); ++i) X.data()[i] = static_cast<float>(rng.normal());
  return X;
}

// Smooth blobs so a small net can learn something in a few epochs.
PatchMatrix blob_patches(int n, int p, std::uint64_t seed) {
  PatchMatrix X(n, p * p);
  Stream rng(seed, "blob");
  for (int i = 0; i < n; ++i) {
    const double cx = rng.uniform(4, p - 4), cy = rng.uniform(4, p - 4), s = rng.uniform(2, 6);
    for (int y = 0; y < p; ++y)
      for (int x = 0; x < p; ++x)
        X(i, y * p + x) = static_cast<float>(std::exp(-((x - cx) * (x - cx) + (y - cy) * (y - cy)) / (2 * s * s)));
  }
  return X;
}

// out(co, n, y, x) = b[co] + sum w[co, ky, kx, ci] * in(ci, n, y+ky-r, x+kx-r), zero padded.
Mat<double> naive_conv(const Mat<double>& in, int Cin, int Cout, int N, int H, int W, int k,
                       const std::vector<double>& w, const std::vector<double>& b) {
  const int r = k / 2;
  Mat<double> out(Cout, N * H * W);
  for (int n = 0; n < N; ++n)
    for (int y = 0; y < H; ++y)
      for (int x = 0; x < W; ++x)
        for (int co = 0; co < Cout; ++co) {
          double s = b[co];
          for (int ky = 0; ky < k; ++ky)
            for (int kx = 0; kx < k; ++kx) {
              const int sy = y + ky - r, sx = x + kx - r;
              if (sy < 0 || sy >= H || sx < 0 || sx >= W) continue;
              for (int ci = 0; ci < Cin; ++ci)
                s += w[(co * k * k + ky * k + kx) * Cin + ci] * in(ci, (n * H + sy) * W + sx);
            }
          out(co, (n * H + y) * W + x) = s;
        }
  return out;
}

void run_conv(const Mat<double>& in, int Cin, int Cout, int N, int H, int W, int k, const std::vector<double>& w,
              const std::vector<double>& b, Mat<double>& out) {
  if (Cin == 1 || Cout == 1) {
    ae::direct_conv_forward(in, Cin, Cout, N, H, W, k, w.data(), b.data(), out);
  } else {
    Mat<double> cols;
    ae::conv_forward(in, Cin, Cout, N, H, W, k, w.data(), b.data(), cols, out);
  }
}

TEST(AeConv, MatchesNaiveConvolution) {
  Stream rng(3, "conv");
  for (auto [cin, cout] : {std::pair{1, 3}, {3, 1}, {2, 3}, {1, 16}, {16, 1}, {5, 1}}) {
    const int N = 2, H = 7, W = 6, k = 3;
    Mat<double> in(cin, N * H * W);
    for (Eigen::Index i = 0; i < in.size(); ++i) in.data()[i] = rng.normal();
    std::vector<double> w(static_cast<std::size_t>(cout * k * k * cin)), b(static_cast<std::size_t>(cout));
    for (auto& v : w) v = rng.normal();
    for (auto& v : b) v = rng.normal();
    Mat<double> out;
    run_conv(in, cin, cout, N, H, W, k, w, b, out);
    EXPECT_LT((out - naive_conv(in, cin, cout, N, H, W, k, w, b)).cwiseAbs().maxCoeff(), 1e-12)
        << cin << "->" << cout;
  }
}

TEST(AeConv, DirectBackwardIsTheAdjoint) {
  Stream rng(4, "adj");
  for (auto [cin, cout] : {std::pair{1, 4}, {4, 1}}) {
    const int N = 2, H = 6, W = 5, k = 5;
    Mat<double> in(cin, N * H * W), g(cout, N * H * W);
    for (Eigen::Index i = 0; i < in.size(); ++i) in.data()[i] = rng.normal();
    for (Eigen::Index i = 0; i < g.size(); ++i) g.data()[i] = rng.normal();
    std::vector<double> w(static_cast<std::size_t>(cout * k * k * cin)), zero(static_cast<std::size_t>(cout), 0.0);
    for (auto& v : w) v = rng.normal();
    std::vector<double> dw(w.size()), db(zero.size());
    Mat<double> din;
    ae::direct_conv_backward(in, g, cin, cout, N, H, W, k, w.data(), dw.data(), db.data(), &din);
    // <g, conv(in)> is linear in both in and w.
    Mat<double> out;
    ae::direct_conv_forward(in, cin, cout, N, H, W, k, w.data(), zero.data(), out);
    const double ip = (g.array() * out.array()).sum();
    EXPECT_NEAR((din.array() * in.array()).sum(), ip, 1e-10);
    double wdw = 0;
    for (std::size_t i = 0; i < w.size(); ++i) wdw += w[i] * dw[i];
    EXPECT_NEAR(wdw, ip, 1e-10);
    for (int c = 0; c < cout; ++c) EXPECT_NEAR(db[c], g.row(c).sum(), 1e-12);
  }
}

TEST(AeConv, PoolAndUpsampleAdjoints) {
  Stream rng(5, "pool");
  const int C = 3, N = 2, H = 8, W = 6;
  Mat<double> x(C, N * H * W), y(C, N * (H / 2) * (W / 2));
  for (Eigen::Index i = 0; i < x.size(); ++i) x.data()[i] = rng.normal();
  for (Eigen::Index i = 0; i < y.size(); ++i) y.data()[i] = rng.normal();
  Mat<double> px, dy, uy, dx;
  ae::avg_pool2(x, C, N, H, W, px);
  ae::avg_pool2_backward(y, C, N, H, W, dx);
  EXPECT_NEAR((px.array() * y.array()).sum(), (x.array() * dx.array()).sum(), 1e-12);
  ae::upsample2(y, C, N, H / 2, W / 2, uy);
  ae::upsample2_backward(x, C, N, H / 2, W / 2, dy);
  EXPECT_NEAR((uy.array() * x.array()).sum(), (y.array() * dy.array()).sum(), 1e-12);
}

TEST(AeConv, TranslationConsistentOnInterior) {
  // One conv layer: shifting the input by the pooling factor shifts the
  // pre-pooling activations by the same amount away from the border.
  Stream rng(6, "shift");
  const int C = 4, H = 20, W = 20, k = 5, s = 2, r = k / 2;
  Mat<double> in(1, H * W), shifted = Mat<double>::Zero(1, H * W);
  for (Eigen::Index i = 0; i < in.size(); ++i) in.data()[i] = rng.normal();
  for (int y = 0; y < H - s; ++y)
    for (int x = 0; x < W - s; ++x) shifted(0, (y + s) * W + x + s) = in(0, y * W + x);
  std::vector<double> w(static_cast<std::size_t>(C * k * k)), b(C, 0.1);
  for (auto& v : w) v = rng.normal();
  Mat<double> a, as;
  ae::direct_conv_forward(in, 1, C, 1, H, W, k, w.data(), b.data(), a);
  ae::direct_conv_forward(shifted, 1, C, 1, H, W, k, w.data(), b.data(), as);
  for (int y = r; y < H - s - r; ++y)
    for (int x = r; x < W - s - r; ++x)
      for (int c = 0; c < C; ++c) EXPECT_NEAR(as(c, (y + s) * W + x + s), a(c, y * W + x), 1e-12);
}

TEST(Autoencoder, BottleneckOnSimplexAndShapes) {
  const auto m = init_autoencoder<double>(AEArchitecture{}, 2);
  const auto X = random_patches(4, 32, 1);
  for (int i = 0; i < 4; ++i) {
    const auto o = ae_forward(m, X.row(i).data(), 1024);
    ASSERT_EQ(o.bottleneck.size(), 64);
    EXPECT_NEAR(o.bottleneck.sum(), 1.0, 1e-9);
    EXPECT_GE(o.bottleneck.minCoeff(), 0.0);
    EXPECT_EQ(o.reconstruction.width, 32u);
    EXPECT_EQ(o.reconstruction.height, 32u);
    for (double v : o.reconstruction.data) EXPECT_TRUE(std::isfinite(v));
  }
  const SoftEncoder<double> enc{m};
  const auto codes = enc.encode(X);
  for (Eigen::Index i = 0; i < codes.rows(); ++i) EXPECT_NEAR(codes.row(i).sum(), 1.0, 1e-9);
  EXPECT_THROW(ae_forward(m, X.row(0).data(), 100), Error);
}

TEST(Autoencoder, ArgmaxEncoderIsOneHotAtSoftMaximum) {
  const auto m = init_autoencoder<double>(AEArchitecture{}, 4);
  const auto X = random_patches(6, 32, 2);
  const auto soft = SoftEncoder<double>{m}.encode(X);
  const auto hard = ArgmaxEncoder<double>{m}.encode(X);
  ASSERT_EQ(hard.cols(), 64);
  for (Eigen::Index i = 0; i < X.rows(); ++i) {
    Eigen::Index j = 0;
    soft.row(i).maxCoeff(&j);
    EXPECT_EQ(hard(i, j), 1.0);
    EXPECT_EQ(hard.row(i).sum(), 1.0);
  }
}

TEST(Autoencoder, ZeroSoftmaxLayerGivesUniform) {
  auto m = init_autoencoder<double>(AEArchitecture{}, 2);
  const auto L = ae_layout(m.arch);
  for (int t : {WF, BF})
    std::fill_n(m.params.begin() + static_cast<std::ptrdiff_t>(L[t].offset), L[t].size, 0.0);
  const auto X = random_patches(1, 32, 3);
  const auto o = ae_forward(m, X.data(), 1024);
  for (Eigen::Index j = 0; j < o.bottleneck.size(); ++j) EXPECT_NEAR(o.bottleneck(j), 1.0 / 64, 1e-15);
}

TEST(Autoencoder, GradientCheckTinyNet) {
  // Zero biases put some pre-activations exactly on the ReLU kink.
  auto m = init_autoencoder<double>(AEArchitecture{16, 3, 2, 3, 4}, 5);
  Stream rng(5, "bias");
  const auto L = ae_layout(m.arch);
  for (int t : {B1, B2, BF, BD, B3, B4})
    for (std::size_t i = 0; i < L[t].size; ++i) m.params[L[t].offset + i] = 0.1 * rng.normal();
  const auto X = random_patches(2, 16, 7);
  const auto r = gradient_check(m, X);
  EXPECT_EQ(r.failures, 0u);
  EXPECT_LT(r.max_rel_error, 1e-5);
  EXPECT_EQ(r.checked, ae_param_count(m.arch));
  EXPECT_GT(r.checked - r.small, r.checked / 2);
}

TEST(Autoencoder, TrainingReducesLossAndIsThreadIndependent) {
  const AEArchitecture arch{16, 3, 4, 8, 8};
  const auto X = blob_patches(200, 16, 9);
  TrainOptions opt;
  opt.epochs = 12;
  opt.batch_size = 20;
  auto a = init_autoencoder<float>(arch, 1);
  auto b = a;
  train_autoencoder(a, X, opt);
  opt.threads = 3;
  train_autoencoder(b, X, opt);
  ASSERT_EQ(a.loss_log.size(), 12u);
  EXPECT_LT(a.loss_log.back(), a.loss_log.front());
  EXPECT_EQ(a.params, b.params);
  EXPECT_EQ(a.loss_log, b.loss_log);
}

TEST(Autoencoder, DivergenceNamesTheEpoch) {
  auto m = init_autoencoder<double>(AEArchitecture{16, 3, 2, 2, 4}, 1);
  TrainOptions opt;
  opt.epochs = 50;
  opt.learning_rate = 1e12;
  opt.batch_size = 4;
  try {
    train_autoencoder(m, random_patches(8, 16, 2), opt);
    FAIL() << "expected divergence";
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::Numeric);
    EXPECT_EQ(e.code(), "divergence");
    EXPECT_NE(std::string(e.what()).find("epoch"), std::string::npos);
  }
}

TEST(Autoencoder, ProbesDifferAndRangeChecked) {
  const auto m = init_autoencoder<double>(AEArchitecture{}, 8);
  const auto p0 = probe_cluster(m, 0), p1 = probe_cluster(m, 1);
  EXPECT_NE(p0.data, p1.data);
  EXPECT_THROW(probe_cluster(m, 64), Error);
  EXPECT_THROW(probe_cluster(m, -1), Error);
  const auto img = grid_to_image(p0);
  EXPECT_EQ(*std::max_element(img.pixels.begin(), img.pixels.end()), 65535);
  EXPECT_EQ(*std::min_element(img.pixels.begin(), img.pixels.end()), 0);
}

TEST(Autoencoder, ReconstructionStatsLine) {
  const auto m = init_autoencoder<double>(AEArchitecture{16, 3, 2, 2, 4}, 1);
  const auto X = random_patches(5, 16, 4);
  const auto e = reconstruction_errors(m, X);
  const auto s = reconstruction_stats(m, X);
  EXPECT_EQ(s.min, *std::min_element(e.begin(), e.end()));
  EXPECT_EQ(format_reconstruction_stats({0.0044, 1.2510, 0.6817}),
            "minimum reconstruction error 0.0044, maximum 1.2510, average 0.6817");
}

TEST(Autoencoder, ModelFileRoundTripAndErrors) {
  TempDir dir;
  auto m = init_autoencoder<double>(AEArchitecture{16, 3, 2, 3, 4}, 3);
  m.loss_log = {0.9, 0.5};
  write_autoencoder(dir.path() / "m.xaem", m);
  EXPECT_EQ(read_autoencoder<double>(dir.path() / "m.xaem"), m);

  auto bytes = encode_autoencoder(m);
  auto bad = bytes;
  bad[1] = 'Z';
  EXPECT_THROW(decode_autoencoder<double>(bad), Error);
  auto cut = bytes;
  cut.resize(cut.size() - 9);
  try {
    decode_autoencoder<double>(cut);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::Format);
    EXPECT_NE(std::string(e.what()).find("offset"), std::string::npos);
  }
}

}  // namespace
}  // namespace xsim
