#include "cpcp/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <stdexcept>

namespace cpcp {

namespace {

double sq_dist(const double* a, const double* b, std::size_t d) {
  double acc = 0.0;
  for (std::size_t j = 0; j < d; ++j) {
    const double diff = a[j] - b[j];
    acc += diff * diff;
  }
  return acc;
}

Standardizer fit_all_rows(const Matrix& x) {
  std::vector<std::size_t> rows(x.rows);
  std::iota(rows.begin(), rows.end(), std::size_t{0});
  return Standardizer::fit(x, rows);
}

}  // namespace

KmeansResult kmeans(const Matrix& points, std::size_t K, RngStream& rng,
                    std::size_t max_iter) {
  const std::size_t n = points.rows;
  const std::size_t d = points.cols;
  if (K < 1 || K > n) {
    throw std::invalid_argument("kmeans: need 1 <= K <= n");
  }

  KmeansResult res;
  res.centers = Matrix(K, d);

  // k-means++ seeding: first center uniform, then squared-distance sampling.
  std::vector<double> min_d2(n, std::numeric_limits<double>::infinity());
  {
    const std::size_t first = static_cast<std::size_t>(rng.next_below(n));
    std::copy(points.row(first), points.row(first) + d, res.centers.row(0));
    for (std::size_t i = 0; i < n; ++i) {
      min_d2[i] = sq_dist(points.row(i), res.centers.row(0), d);
    }
    for (std::size_t c = 1; c < K; ++c) {
      double total = 0.0;
      for (double v : min_d2) total += v;
      std::size_t pick = 0;
      if (total > 0.0) {
        const double u = rng.next_uniform() * total;
        double acc = 0.0;
        pick = n - 1;
        for (std::size_t i = 0; i < n; ++i) {
          acc += min_d2[i];
          if (u < acc) {
            pick = i;
            break;
          }
        }
      } else {
        pick = static_cast<std::size_t>(rng.next_below(n));
      }
      std::copy(points.row(pick), points.row(pick) + d, res.centers.row(c));
      for (std::size_t i = 0; i < n; ++i) {
        min_d2[i] = std::min(min_d2[i], sq_dist(points.row(i), res.centers.row(c), d));
      }
    }
  }

  res.assignment.assign(n, 0);
  auto assign_all = [&]() {
    bool changed = false;
    for (std::size_t i = 0; i < n; ++i) {
      std::size_t best = 0;
      double best_d = std::numeric_limits<double>::infinity();
      for (std::size_t c = 0; c < K; ++c) {
        const double dist = sq_dist(points.row(i), res.centers.row(c), d);
        if (dist < best_d) {
          best_d = dist;
          best = c;
        }
      }
      if (res.assignment[i] != best) changed = true;
      res.assignment[i] = best;
    }
    return changed;
  };
  auto wcss = [&]() {
    double total = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      total += sq_dist(points.row(i), res.centers.row(res.assignment[i]), d);
    }
    return total;
  };

  assign_all();
  res.wcss_trace.push_back(wcss());
  for (std::size_t it = 0; it < max_iter; ++it) {
    // Recompute means; re-seed empty clusters at the point farthest from its
    // current center.
    Matrix sums(K, d, 0.0);
    std::vector<std::size_t> counts(K, 0);
    for (std::size_t i = 0; i < n; ++i) {
      const std::size_t c = res.assignment[i];
      double* srow = sums.row(c);
      const double* prow = points.row(i);
      for (std::size_t j = 0; j < d; ++j) srow[j] += prow[j];
      ++counts[c];
    }
    for (std::size_t c = 0; c < K; ++c) {
      if (counts[c] > 0) {
        double* crow = res.centers.row(c);
        const double* srow = sums.row(c);
        for (std::size_t j = 0; j < d; ++j) crow[j] = srow[j] / static_cast<double>(counts[c]);
      } else {
        std::size_t far = 0;
        double far_d = -1.0;
        for (std::size_t i = 0; i < n; ++i) {
          const double dist = sq_dist(points.row(i), res.centers.row(res.assignment[i]), d);
          if (dist > far_d) {
            far_d = dist;
            far = i;
          }
        }
        std::copy(points.row(far), points.row(far) + d, res.centers.row(c));
      }
    }
    const bool changed = assign_all();
    res.wcss_trace.push_back(wcss());
    if (!changed) break;
  }
  return res;
}

double msce_from_assignment(const std::vector<std::size_t>& assignment, std::size_t K,
                            const std::vector<std::uint8_t>& covered, double tau) {
  if (assignment.size() != covered.size() || assignment.empty()) {
    throw std::invalid_argument("msce_from_assignment: empty input or size mismatch");
  }
  std::vector<std::size_t> counts(K, 0), hits(K, 0);
  for (std::size_t i = 0; i < assignment.size(); ++i) {
    ++counts[assignment[i]];
    hits[assignment[i]] += covered[i] ? 1 : 0;
  }
  const double n = static_cast<double>(assignment.size());
  double total = 0.0;
  for (std::size_t g = 0; g < K; ++g) {
    if (counts[g] == 0) continue;
    const double cov = static_cast<double>(hits[g]) / static_cast<double>(counts[g]);
    total += (static_cast<double>(counts[g]) / n) * (cov - tau) * (cov - tau);
  }
  return total;
}

double msce_clustered(const Matrix& features, const std::vector<std::uint8_t>& covered,
                      double tau, std::size_t K, RngStream rng) {
  if (features.rows != covered.size()) {
    throw std::invalid_argument("msce_clustered: feature/indicator size mismatch");
  }
  if (K > features.rows) throw std::invalid_argument("msce_clustered: K > n");
  const Matrix std_feats = fit_all_rows(features).apply(features);
  const KmeansResult km = kmeans(std_feats, K, rng);
  return msce_from_assignment(km.assignment, K, covered, tau);
}

double oracle_msce(const ConformalPredictor& predictor, const SyntheticOracle& oracle,
                   const Matrix& x_model, const Matrix& x_original) {
  if (x_model.rows != x_original.rows || x_model.rows == 0) {
    throw std::invalid_argument("oracle_msce: empty test set or row mismatch");
  }
  const double tau = predictor.tau();
  double total = 0.0;
  for (std::size_t i = 0; i < x_model.rows; ++i) {
    const PredictionBox box = predictor.predict_box(x_model.row_vec(i));
    const double pi = oracle.box_coverage(x_original.row_vec(i), box.lower, box.upper);
    total += (pi - tau) * (pi - tau);
  }
  return total / static_cast<double>(x_model.rows);
}

double wsc(const Matrix& features, const std::vector<std::uint8_t>& covered,
           double mass_fraction, std::size_t n_directions, RngStream rng) {
  const std::size_t n = features.rows;
  if (n != covered.size() || n == 0) {
    throw std::invalid_argument("wsc: empty input or size mismatch");
  }
  if (!(mass_fraction > 0.0) || mass_fraction > 1.0 || n_directions < 1) {
    throw std::invalid_argument("wsc: invalid mass fraction or direction count");
  }
  if (n < 4) return marginal_coverage(covered);

  const std::size_t d = features.cols;
  const Matrix std_feats = fit_all_rows(features).apply(features);

  // 25% search / 75% evaluation split.
  const std::vector<std::size_t> perm = rng.permutation(n);
  const std::size_t n_search = std::max<std::size_t>(1, n / 4);
  std::vector<std::size_t> search_idx(perm.begin(), perm.begin() + n_search);
  std::vector<std::size_t> eval_idx(perm.begin() + n_search, perm.end());

  double eval_marginal = 0.0;
  for (std::size_t i : eval_idx) eval_marginal += covered[i] ? 1.0 : 0.0;
  eval_marginal /= static_cast<double>(eval_idx.size());

  constexpr std::size_t kKnots = 41;
  bool found = false;
  double best_cov = std::numeric_limits<double>::infinity();
  Vec best_v(d, 0.0);
  double best_a = 0.0, best_b = 0.0;
  bool best_unbounded = false;

  Vec v(d), proj(n_search);
  std::vector<std::size_t> sort_order(n_search);
  for (std::size_t dir = 0; dir < n_directions; ++dir) {
    double norm = 0.0;
    for (std::size_t j = 0; j < d; ++j) {
      v[j] = rng.next_normal();
      norm += v[j] * v[j];
    }
    norm = std::sqrt(norm);
    if (!(norm > 1e-12)) continue;
    for (std::size_t j = 0; j < d; ++j) v[j] /= norm;

    for (std::size_t i = 0; i < n_search; ++i) {
      const double* row = std_feats.row(search_idx[i]);
      double p = 0.0;
      for (std::size_t j = 0; j < d; ++j) p += v[j] * row[j];
      proj[i] = p;
    }
    std::iota(sort_order.begin(), sort_order.end(), std::size_t{0});
    std::sort(sort_order.begin(), sort_order.end(),
              [&](std::size_t a, std::size_t b) { return proj[a] < proj[b]; });
    Vec sorted(n_search);
    Vec prefix(n_search + 1, 0.0);
    for (std::size_t i = 0; i < n_search; ++i) {
      sorted[i] = proj[sort_order[i]];
      prefix[i + 1] = prefix[i] + (covered[search_idx[sort_order[i]]] ? 1.0 : 0.0);
    }

    double knots[kKnots];
    for (std::size_t k = 0; k < kKnots; ++k) {
      const double level = static_cast<double>(k) / static_cast<double>(kKnots - 1);
      const std::size_t pos = std::min(
          n_search - 1, static_cast<std::size_t>(level * static_cast<double>(n_search - 1)));
      knots[k] = sorted[pos];
    }

    for (std::size_t ka = 0; ka < kKnots; ++ka) {
      for (std::size_t kb = ka + 1; kb < kKnots; ++kb) {
        const double a = knots[ka];
        const double b = knots[kb];
        if (!(a < b)) continue;
        const std::size_t lo =
            std::lower_bound(sorted.begin(), sorted.end(), a) - sorted.begin();
        const std::size_t hi =
            std::upper_bound(sorted.begin(), sorted.end(), b) - sorted.begin();
        const std::size_t count = hi - lo;
        if (static_cast<double>(count) < mass_fraction * static_cast<double>(n_search)) {
          continue;
        }
        const double cov = (prefix[hi] - prefix[lo]) / static_cast<double>(count);
        if (cov < best_cov) {
          best_cov = cov;
          best_v = v;
          best_a = a;
          best_b = b;
          // A slab holding the whole probe sample is unconstrained.
          best_unbounded = (count == n_search);
          found = true;
        }
      }
    }
  }

  if (!found || best_unbounded) return eval_marginal;

  std::size_t in_slab = 0, hits = 0;
  for (std::size_t i : eval_idx) {
    const double* row = std_feats.row(i);
    double p = 0.0;
    for (std::size_t j = 0; j < d; ++j) p += best_v[j] * row[j];
    if (p >= best_a && p <= best_b) {
      ++in_slab;
      hits += covered[i] ? 1 : 0;
    }
  }
  if (in_slab == 0) return eval_marginal;
  return static_cast<double>(hits) / static_cast<double>(in_slab);
}

double log_volume_per_dim(const PredictionBox& box) {
  if (box.lower.empty()) throw std::invalid_argument("log_volume_per_dim: empty box dims");
  if (box.empty()) return -std::numeric_limits<double>::infinity();
  double total = 0.0;
  for (std::size_t j = 0; j < box.lower.size(); ++j) {
    total += std::log(box.upper[j] - box.lower[j]);
  }
  return total / static_cast<double>(box.lower.size());
}

double marginal_coverage(const std::vector<std::uint8_t>& covered) {
  if (covered.empty()) throw std::invalid_argument("marginal_coverage: empty input");
  double total = 0.0;
  for (auto c : covered) total += c ? 1.0 : 0.0;
  return total / static_cast<double>(covered.size());
}

}  // namespace cpcp
