#ifndef PVSE_LOSS_HPP_
#define PVSE_LOSS_HPP_

#include <algorithm>
#include <cassert>
#include <cmath>
#include <numbers>
#include <span>
#include <string>
#include <vector>

#include "pvse/error.hpp"
#include "pvse/linalg.hpp"

namespace pvse {

enum class LossVariant { kTriplet, kNpair, kSingleAngular, kBatchAngular, kNpairAngular };

inline std::string ToString(LossVariant v) {
  switch (v) {
    case LossVariant::kTriplet: return "triplet";
    case LossVariant::kNpair: return "npair";
    case LossVariant::kSingleAngular: return "single_angular";
    case LossVariant::kBatchAngular: return "batch_angular";
    case LossVariant::kNpairAngular: return "npair_angular";
  }
  return "unknown";
}

inline LossVariant ParseLossVariant(const std::string& s) {
  for (auto v : {LossVariant::kTriplet, LossVariant::kNpair, LossVariant::kSingleAngular,
                 LossVariant::kBatchAngular, LossVariant::kNpairAngular})
    if (ToString(v) == s) return v;
  throw ArgumentError("unknown loss variant: " + s);
}

struct LossConfig {
  LossVariant variant = LossVariant::kNpairAngular;
  double lambda = 2.0;
  double alpha_deg = 36.0;
  double triplet_margin = 0.2;

  double alpha_rad() const { return alpha_deg * std::numbers::pi / 180.0; }

  void validate() const {
    if (!(lambda >= 0.0)) throw ArgumentError("lambda must be >= 0");
    if (!(alpha_deg > 0.0 && alpha_deg < 90.0)) throw ArgumentError("alpha must lie in (0, 90) degrees");
    if (!(triplet_margin > 0.0)) throw ArgumentError("triplet margin must be positive");
  }
};

// Angular-loss core on unit vectors:
//   4 (a + p)^T n tan^2(alpha) - 2 a^T p (1 + tan^2(alpha)).
// Differs from ||a-p||^2 - 4 ||n - c||^2 tan^2(alpha), c = (a+p)/2, by the
// constant 2 - 6 tan^2(alpha).
inline double FAng(std::span<const double> anchor, std::span<const double> positive,
                   std::span<const double> negative, double alpha_rad) {
  assert(std::abs(Norm(anchor) - 1.0) < 1e-6 || Norm(anchor) == 0.0);
  const double t2 = std::pow(std::tan(alpha_rad), 2);
  double ap = 0.0, sn = 0.0;
  for (std::size_t k = 0; k < anchor.size(); ++k) {
    ap += anchor[k] * positive[k];
    sn += (anchor[k] + positive[k]) * negative[k];
  }
  return 4.0 * sn * t2 - 2.0 * ap * (1.0 + t2);
}

namespace detail {

// log(1 + sum_m exp(z_m)), evaluated with the implicit zero logit in the
// max shift. Writes d/dz_m into weights when non-null.
inline double LogOnePlusSumExp(std::span<const double> z, std::vector<double>* weights = nullptr) {
  double shift = 0.0;
  for (double v : z) shift = std::max(shift, v);
  double s = std::exp(-shift);
  for (double v : z) s += std::exp(v - shift);
  if (weights) {
    weights->resize(z.size());
    for (std::size_t m = 0; m < z.size(); ++m) (*weights)[m] = std::exp(z[m] - shift) / s;
  }
  return shift + std::log(s);
}

inline void CheckBatch(const Matrix& images, const Matrix& tags) {
  if (images.rows() != tags.rows() || images.cols() != tags.cols())
    throw ArgumentError("image and tag embedding batches differ in shape");
}

// One direction of an in-batch log-sum-exp loss:
//   (1 / 2N) sum_n log(1 + sum_{m != n} exp(score(n, m)))
// over N anchors. Score is a functor with
//   double value(n, m) and void grad(n, m, coeff, gA, gP).
template <typename Score>
double InBatchTerm(std::size_t N, const Score& score, Matrix* gA, Matrix* gP) {
  if (N < 2) return 0.0;
  const double scale = 1.0 / (2.0 * static_cast<double>(N));
  std::vector<double> z(N - 1), w;
  double total = 0.0;
  for (std::size_t n = 0; n < N; ++n) {
    for (std::size_t m = 0, q = 0; m < N; ++m)
      if (m != n) z[q++] = score.value(n, m);
    total += scale * LogOnePlusSumExp(z, gA ? &w : nullptr);
    if (!gA) continue;
    for (std::size_t m = 0, q = 0; m < N; ++m)
      if (m != n) score.grad(n, m, scale * w[q++], *gA, *gP);
  }
  return total;
}

struct NpairScore {
  const Matrix& A;
  const Matrix& P;
  double value(std::size_t n, std::size_t m) const { return Dot(A.row(n), P.row(m)) - Dot(A.row(n), P.row(n)); }
  void grad(std::size_t n, std::size_t m, double c, Matrix& gA, Matrix& gP) const {
    Axpy(c, P.row(m), gA.row(n));
    Axpy(-c, P.row(n), gA.row(n));
    Axpy(c, A.row(n), gP.row(m));
    Axpy(-c, A.row(n), gP.row(n));
  }
};

struct AngularScore {
  const Matrix& A;
  const Matrix& P;
  double alpha;
  double t2 = std::pow(std::tan(alpha), 2);
  double value(std::size_t n, std::size_t m) const { return FAng(A.row(n), P.row(n), P.row(m), alpha); }
  void grad(std::size_t n, std::size_t m, double c, Matrix& gA, Matrix& gP) const {
    const double u = 4.0 * t2, w = 2.0 * (1.0 + t2);
    Axpy(c * u, P.row(m), gA.row(n));
    Axpy(-c * w, P.row(n), gA.row(n));
    Axpy(c * u, P.row(m), gP.row(n));
    Axpy(-c * w, A.row(n), gP.row(n));
    Axpy(c * u, A.row(n), gP.row(m));
    Axpy(c * u, P.row(n), gP.row(m));
  }
};

inline void PrepareGrads(const Matrix& images, Matrix* g_images, Matrix* g_tags) {
  if ((g_images == nullptr) != (g_tags == nullptr)) throw ArgumentError("pass both gradient outputs or neither");
  if (g_images) {
    if (g_images->rows() != images.rows() || g_images->cols() != images.cols())
      *g_images = Matrix(images.rows(), images.cols());
    if (g_tags->rows() != images.rows() || g_tags->cols() != images.cols())
      *g_tags = Matrix(images.rows(), images.cols());
  }
}

}  // namespace detail

// The functions below take row-wise unit embeddings (image n in row n of
// images, its tag set in row n of tags). Gradients with respect to those unit
// vectors are accumulated into g_images / g_tags when provided.

inline double NpairLoss(const Matrix& images, const Matrix& tags, Matrix* g_images = nullptr,
                        Matrix* g_tags = nullptr) {
  detail::CheckBatch(images, tags);
  detail::PrepareGrads(images, g_images, g_tags);
  return detail::InBatchTerm(images.rows(), detail::NpairScore{images, tags}, g_images, g_tags) +
         detail::InBatchTerm(images.rows(), detail::NpairScore{tags, images}, g_tags, g_images);
}

inline double BatchAngularLoss(const Matrix& images, const Matrix& tags, double alpha_rad,
                               Matrix* g_images = nullptr, Matrix* g_tags = nullptr) {
  detail::CheckBatch(images, tags);
  detail::PrepareGrads(images, g_images, g_tags);
  return detail::InBatchTerm(images.rows(), detail::AngularScore{images, tags, alpha_rad}, g_images, g_tags) +
         detail::InBatchTerm(images.rows(), detail::AngularScore{tags, images, alpha_rad}, g_tags, g_images);
}

inline double NpairAngularLoss(const Matrix& images, const Matrix& tags, double lambda, double alpha_rad,
                               Matrix* g_images = nullptr, Matrix* g_tags = nullptr) {
  detail::CheckBatch(images, tags);
  detail::PrepareGrads(images, g_images, g_tags);
  double loss = NpairLoss(images, tags, g_images, g_tags);
  if (lambda == 0.0) return loss;
  if (!g_images) return loss + lambda * BatchAngularLoss(images, tags, alpha_rad);
  Matrix ga(images.rows(), images.cols()), gt(images.rows(), images.cols());
  loss += lambda * BatchAngularLoss(images, tags, alpha_rad, &ga, &gt);
  Axpy(lambda, ga.data(), g_images->data());
  Axpy(lambda, gt.data(), g_tags->data());
  return loss;
}

// max(0, ||a - p||^2 - ||a - n||^2 + margin)
inline double TripletLoss(std::span<const double> anchor, std::span<const double> positive,
                          std::span<const double> negative, double margin) {
  double dp = 0.0, dn = 0.0;
  for (std::size_t k = 0; k < anchor.size(); ++k) {
    dp += (anchor[k] - positive[k]) * (anchor[k] - positive[k]);
    dn += (anchor[k] - negative[k]) * (anchor[k] - negative[k]);
  }
  return std::max(0.0, dp - dn + margin);
}

// log(1 + exp(f_ang(a, p, n)))
inline double SingleAngularLoss(std::span<const double> anchor, std::span<const double> positive,
                                std::span<const double> negative, double alpha_rad) {
  double f = FAng(anchor, positive, negative, alpha_rad);
  return detail::LogOnePlusSumExp(std::span<const double>(&f, 1));
}

// Batch forms of the single-negative baselines: each sample n is paired with
// negative m = (n + 1) mod N, in both directions, and the 2N terms averaged.
inline double TripletBatchLoss(const Matrix& images, const Matrix& tags, double margin, Matrix* g_images = nullptr,
                               Matrix* g_tags = nullptr) {
  detail::CheckBatch(images, tags);
  detail::PrepareGrads(images, g_images, g_tags);
  const std::size_t N = images.rows();
  if (N < 2) return 0.0;
  const double scale = 1.0 / (2.0 * static_cast<double>(N));
  double total = 0.0;
  auto term = [&](const Matrix& A, const Matrix& P, Matrix* gA, Matrix* gP) {
    for (std::size_t n = 0; n < N; ++n) {
      const std::size_t m = (n + 1) % N;
      auto a = A.row(n), p = P.row(n), q = P.row(m);
      double h = TripletLoss(a, p, q, margin);
      total += scale * h;
      if (!gA || h <= 0.0) continue;
      for (std::size_t k = 0; k < a.size(); ++k) {
        gA->row(n)[k] += scale * 2.0 * (q[k] - p[k]);
        gP->row(n)[k] += scale * -2.0 * (a[k] - p[k]);
        gP->row(m)[k] += scale * 2.0 * (a[k] - q[k]);
      }
    }
  };
  term(images, tags, g_images, g_tags);
  term(tags, images, g_tags, g_images);
  return total;
}

inline double SingleAngularBatchLoss(const Matrix& images, const Matrix& tags, double alpha_rad,
                                     Matrix* g_images = nullptr, Matrix* g_tags = nullptr) {
  detail::CheckBatch(images, tags);
  detail::PrepareGrads(images, g_images, g_tags);
  const std::size_t N = images.rows();
  if (N < 2) return 0.0;
  const double scale = 1.0 / (2.0 * static_cast<double>(N));
  double total = 0.0;
  auto term = [&](const Matrix& A, const Matrix& P, Matrix* gA, Matrix* gP) {
    detail::AngularScore score{A, P, alpha_rad};
    for (std::size_t n = 0; n < N; ++n) {
      const std::size_t m = (n + 1) % N;
      double f = score.value(n, m);
      std::vector<double> w;
      total += scale * detail::LogOnePlusSumExp(std::span<const double>(&f, 1), &w);
      if (gA) score.grad(n, m, scale * w[0], *gA, *gP);
    }
  };
  term(images, tags, g_images, g_tags);
  term(tags, images, g_tags, g_images);
  return total;
}

// Configured loss on unit embeddings.
inline double EvaluateLoss(const Matrix& images, const Matrix& tags, const LossConfig& cfg,
                           Matrix* g_images = nullptr, Matrix* g_tags = nullptr) {
  switch (cfg.variant) {
    case LossVariant::kTriplet: return TripletBatchLoss(images, tags, cfg.triplet_margin, g_images, g_tags);
    case LossVariant::kNpair: return NpairLoss(images, tags, g_images, g_tags);
    case LossVariant::kSingleAngular: return SingleAngularBatchLoss(images, tags, cfg.alpha_rad(), g_images, g_tags);
    case LossVariant::kBatchAngular: return BatchAngularLoss(images, tags, cfg.alpha_rad(), g_images, g_tags);
    case LossVariant::kNpairAngular:
      return NpairAngularLoss(images, tags, cfg.lambda, cfg.alpha_rad(), g_images, g_tags);
  }
  throw ArgumentError("unknown loss variant");
}

// Copy with every row scaled to unit norm (zero rows stay zero).
inline Matrix NormalizeRows(const Matrix& m) {
  Matrix out = m;
  for (std::size_t r = 0; r < out.rows(); ++r) {
    double n = Norm(out.row(r));
    if (n > 0.0)
      for (double& v : out.row(r)) v /= n;
  }
  return out;
}

}  // namespace pvse

#endif  // PVSE_LOSS_HPP_
