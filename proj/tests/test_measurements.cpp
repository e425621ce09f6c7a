#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <random>

#include "monocav/inverse.hpp"
#include "monocav/measurements.hpp"

using namespace monocav;
namespace fs = std::filesystem;

namespace {

BoundaryTrace synthetic(std::size_t rows, std::size_t cols, double dt, double ds, unsigned seed) {
  BoundaryTrace tr;
  for (std::size_t c = 0; c < cols; ++c) tr.arc_coords.push_back((c + 0.5) * ds);
  for (std::size_t r = 0; r < rows; ++r) tr.times.push_back((r + 1) * dt);
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> U(-1.0, 1.0);
  tr.values.resize(rows * cols);
  for (auto& v : tr.values) v = U(rng);
  tr.meta.dt = dt;
  tr.meta.T = rows * dt;
  tr.meta.ds = ds;
  tr.meta.nx = tr.meta.ny = 16;
  return tr;
}

fs::path temp_file(const std::string& name) {
  const auto dir = fs::temp_directory_path() / "monocav_test_measurements";
  fs::create_directories(dir);
  return dir / name;
}

ForwardSetup small_setup() {
  ForwardSetup s;
  s.domain.cells = {16, 16};
  s.model = IonicModel::aliev_panfilov();
  s.solver.dt = 0.05;
  s.solver.T = 1.0;
  s.lambda = 11.0;
  s.conductivity = [](const Point&) { return Tensor2::isotropic(0.1); };
  s.u0 = collar_bump(1.0, 0.1, kBottom);
  s.d0 = 0.1;
  return s;
}

}  // namespace

TEST(Misfit, ZeroForIdenticalTraces) {
  const auto p = synthetic(10, 7, 0.1, 0.02, 1);
  EXPECT_EQ(misfit(p, p), 0.0);
}

TEST(Misfit, SymmetricAndTriangle) {
  const auto p = synthetic(12, 5, 0.1, 0.03, 1);
  const auto q = synthetic(12, 5, 0.1, 0.03, 2);
  const auto r = synthetic(12, 5, 0.1, 0.03, 3);
  EXPECT_EQ(misfit(p, q), misfit(q, p));
  EXPECT_LE(misfit(p, r), misfit(p, q) + misfit(q, r) + 1e-15);
}

TEST(Misfit, ConstantOffsetClosedForm) {
  // |p - q| = c everywhere: misfit = c sqrt(|Sigma| T)
  auto p = synthetic(20, 8, 0.05, 0.025, 4);
  auto q = p;
  for (auto& v : q.values) v += 0.3;
  EXPECT_NEAR(misfit(p, q), 0.3 * std::sqrt(8 * 0.025 * 20 * 0.05), 1e-14);
}

TEST(Misfit, HandComputedSmallCase) {
  BoundaryTrace p;
  p.arc_coords = {0.1, 0.3};
  p.times = {0.5, 1.0};
  p.values = {1.0, 2.0, 3.0, 4.0};
  p.meta.ds = 0.2;
  auto q = p;
  q.values = {0.0, 0.0, 0.0, 0.0};
  // (1 + 4) * 0.2 * 0.5 + (9 + 16) * 0.2 * 0.5 = 3
  EXPECT_NEAR(misfit(p, q), std::sqrt(3.0), 1e-15);
}

TEST(Misfit, IncompatibleTraces) {
  const auto p = synthetic(10, 7, 0.1, 0.02, 1);
  auto expect_incompatible = [&](const BoundaryTrace& q) {
    try {
      misfit(p, q);
      FAIL() << "expected IncompatibleTraces";
    } catch (const Error& e) {
      EXPECT_EQ(e.code(), ErrorCode::IncompatibleTraces);
    }
  };
  expect_incompatible(synthetic(11, 7, 0.1, 0.02, 1));
  expect_incompatible(synthetic(10, 6, 0.1, 0.02, 1));
  expect_incompatible(synthetic(10, 7, 0.2, 0.02, 1));
  expect_incompatible(synthetic(10, 7, 0.1, 0.021, 1));
  auto shifted = p;
  shifted.arc_coords[3] += 1e-3;
  expect_incompatible(shifted);
}

TEST(TraceFile, RoundTripIsBitwise) {
  auto tr = synthetic(30, 9, 0.01, 1.0 / 64, 9);
  tr.values[5] = 1e-300;
  tr.values[6] = -0.0;
  tr.values[7] = 0.1 + 0.2;
  tr.meta.model = "fitzhugh_nagumo";
  tr.meta.scheme = "picard";
  tr.meta.A = 8.0;
  tr.meta.a = 0.15;
  tr.meta.eps = 0.002;
  tr.meta.gamma = 1.0 / 3.0;
  tr.meta.s0 = 0.1;
  tr.meta.s1 = 0.35;
  const auto path = temp_file("roundtrip.csv");
  write_trace(tr, path.string());
  const auto back = read_trace(path.string());
  EXPECT_TRUE(back == tr);
  EXPECT_EQ(misfit(back, tr), 0.0);
}

TEST(TraceFile, MalformedReportsLine) {
  const auto path = temp_file("bad.csv");
  auto write = [&](const std::string& text) {
    std::ofstream(path) << text;
  };
  auto line_of = [&]() -> std::size_t {
    try {
      read_trace(path.string());
    } catch (const MalformedFileError& e) {
      EXPECT_EQ(e.code(), ErrorCode::MalformedFile);
      return e.line();
    }
    return 0;
  };
  write("# ds=0.1\n# arc=[0.1,0.2]\n0.1,1,2\n0.2,1\n");
  EXPECT_EQ(line_of(), 4u);
  write("# ds=0.1\n# arc=[0.1,0.2]\n0.1,1,abc\n");
  EXPECT_EQ(line_of(), 3u);
  write("# ds=0.1\n0.1,1,2\n");
  EXPECT_EQ(line_of(), 2u);
  write("# ds=0.1\n# arc=[0.1,0.2]\n0.2,1,2\n0.1,1,2\n");
  EXPECT_EQ(line_of(), 4u);
  write("# bogus=1\n");
  EXPECT_EQ(line_of(), 1u);
  write("# arc=[0.1]\n0.1,2\n");
  EXPECT_GT(line_of(), 0u);  // missing ds
  EXPECT_THROW(read_trace((path.parent_path() / "missing.csv").string()), Error);
}

TEST(Resample, IdentityOnSameSampling) {
  const auto p = synthetic(10, 6, 0.1, 0.05, 3);
  EXPECT_TRUE(resample_like(p, p) == p);
}

TEST(Resample, ExactForBilinearData) {
  auto fine = synthetic(20, 16, 0.05, 0.025, 1);
  for (std::size_t r = 0; r < fine.rows(); ++r)
    for (std::size_t c = 0; c < fine.cols(); ++c)
      fine.at(r, c) = 1.0 + 2.0 * fine.times[r] - 3.0 * fine.arc_coords[c];
  std::vector<double> arc{0.05, 0.1, 0.2, 0.3}, times{0.1, 0.25, 0.5, 1.0};
  const auto coarse = resample_trace(fine, arc, 0.05, times);
  for (std::size_t r = 0; r < times.size(); ++r)
    for (std::size_t c = 0; c < arc.size(); ++c)
      EXPECT_NEAR(coarse.at(r, c), 1.0 + 2.0 * times[r] - 3.0 * arc[c], 1e-13);
  EXPECT_EQ(coarse.meta.ds, 0.05);
  EXPECT_THROW(resample_trace(fine, {0.5}, 0.05, times), Error);  // outside the arc range
}

TEST(Noise, SeededAndScaled) {
  const auto p = synthetic(50, 20, 0.1, 0.02, 5);
  const auto a = add_noise(p, 0.01, 42), b = add_noise(p, 0.01, 42), c = add_noise(p, 0.01, 43);
  EXPECT_TRUE(a == b);
  EXPECT_FALSE(a == c);
  EXPECT_TRUE(add_noise(p, 0.0, 42) == p);
  double s2 = 0.0;
  for (std::size_t i = 0; i < p.values.size(); ++i) s2 += (a.values[i] - p.values[i]) * (a.values[i] - p.values[i]);
  EXPECT_NEAR(std::sqrt(s2 / p.values.size()), 0.01, 0.001);
}

TEST(Extract, ShapeAndMeta) {
  const auto s = small_setup();
  const auto run = run_forward(s, CavityParam::disc({0.5, 0.6}, 0.2));
  const auto& tr = run.trace;
  EXPECT_EQ(tr.rows(), static_cast<std::size_t>(s.solver.step_count()));
  EXPECT_EQ(tr.cols(), run.grid.sigma_faces.size());
  EXPECT_NEAR(tr.times.front(), s.solver.dt, 1e-15);
  EXPECT_NEAR(tr.times.back(), s.solver.T, 1e-12);
  EXPECT_TRUE(std::is_sorted(tr.arc_coords.begin(), tr.arc_coords.end()));
  EXPECT_EQ(tr.meta.model, "aliev_panfilov");
  EXPECT_EQ(tr.meta.scheme, "imex");
  EXPECT_EQ(tr.meta.nx, 16);
  EXPECT_DOUBLE_EQ(tr.meta.ds, 1.0 / 16);
  EXPECT_GT(tr.max_abs(), 0.0);
}

TEST(Extract, AlignTargetFromFinerGrid) {
  auto s = small_setup();
  const auto coarse = forward_trace(s, CavityParam::none());
  auto fine_setup = s;
  fine_setup.domain.cells = {32, 32};
  fine_setup.solver.dt = 0.025;
  const auto fine = forward_trace(fine_setup, CavityParam::none());
  const auto aligned = align_target(fine, s);
  EXPECT_EQ(aligned.rows(), coarse.rows());
  EXPECT_EQ(aligned.cols(), coarse.cols());
  // same field at two resolutions: discretization-level agreement
  EXPECT_LT(misfit(aligned, coarse), 0.1 * std::sqrt(0.25 * s.solver.T) * coarse.max_abs());
  EXPECT_TRUE(align_target(coarse, s) == coarse);
}
