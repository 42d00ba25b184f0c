#include "persona/scoring.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <set>

#include "persona/error.hpp"
#include "persona/rng.hpp"

namespace persona {

RunScore score_run(const AssessmentRun& run, const Scale& scale) {
  std::array<int, 4> first{}, valid{}, missing{};
  for (const auto& item : run.items) {
    const ScaleItem* si = scale.find(item.presented.item_id);
    if (si == nullptr) {
      throw ValidationError("run item \"" + item.presented.item_id +
                            "\" does not belong to scale " + scale.name);
    }
    const int d = static_cast<int>(si->dimension);
    if (!item.choice.pole.has_value()) {
      missing[d] += 1;
      continue;
    }
    valid[d] += 1;
    if (*item.choice.pole == first_pole(si->dimension)) first[d] += 1;
  }

  RunScore out;
  for (int d = 0; d < 4; ++d) {
    DimensionScore& ds = out.dimensions[d];
    ds.dimension = kAllDimensions[d];
    ds.valid_count = valid[d];
    ds.missing_count = missing[d];
    if (valid[d] == 0) {
      ds.unscorable = true;
      ds.letter = second_pole(ds.dimension);
      out.type_code += '?';
      out.any_unscorable = true;
      continue;
    }
    ds.first_pole_percent = 100.0 * first[d] / valid[d];
    ds.tie = 2 * first[d] == valid[d];
    ds.letter = 2 * first[d] > valid[d] ? first_pole(ds.dimension)
                                        : second_pole(ds.dimension);
    out.type_code += pole_letter(ds.letter);
    out.any_tie = out.any_tie || ds.tie;
  }
  return out;
}

KappaResult cohen_kappa(const std::vector<std::optional<int>>& rater_a,
                        const std::vector<std::optional<int>>& rater_b) {
  if (rater_a.size() != rater_b.size()) {
    throw ValidationError("rater sequences differ in length");
  }
  std::map<int, double> marg_a, marg_b;
  int n = 0;
  int equal = 0;
  for (std::size_t i = 0; i < rater_a.size(); ++i) {
    if (!rater_a[i].has_value() || !rater_b[i].has_value()) continue;
    n += 1;
    if (*rater_a[i] == *rater_b[i]) equal += 1;
    marg_a[*rater_a[i]] += 1.0;
    marg_b[*rater_b[i]] += 1.0;
  }
  if (n == 0) {
    throw ValidationError("no overlapping scored items between raters");
  }

  KappaResult out;
  out.item_count = n;
  out.p_observed = static_cast<double>(equal) / n;
  std::set<int> cats;
  for (const auto& [c, _] : marg_a) cats.insert(c);
  for (const auto& [c, _] : marg_b) cats.insert(c);
  for (const int c : cats) {
    const double pa = (marg_a.count(c) ? marg_a.at(c) : 0.0) / n;
    const double pb = (marg_b.count(c) ? marg_b.at(c) : 0.0) / n;
    out.p_expected += pa * pb;
  }
  if (out.p_expected >= 1.0) {
    out.p_expected = 1.0;
    out.degenerate = true;
    out.kappa = out.p_observed == 1.0 ? 1.0 : 0.0;
  } else {
    out.kappa = (out.p_observed - out.p_expected) / (1.0 - out.p_expected);
  }
  return out;
}

KappaResult cohen_kappa(const AssessmentRun& a, const AssessmentRun& b) {
  std::vector<std::optional<int>> va, vb;
  int overlap = 0;
  for (const auto& item : a.items) {
    const ItemResult* other = b.find(item.presented.item_id);
    if (other == nullptr) continue;
    overlap += 1;
    const Dimension dim = item.presented.dimension;
    const auto category = [&](const std::optional<Pole>& p)
        -> std::optional<int> {
      if (!p.has_value()) return std::nullopt;
      return *p == first_pole(dim) ? 0 : 1;
    };
    va.push_back(category(item.choice.pole));
    vb.push_back(category(other->choice.pole));
  }
  if (overlap == 0) {
    throw ValidationError("runs share no items");
  }
  return cohen_kappa(va, vb);
}

double quantile(std::vector<double> values, double p) {
  if (values.empty()) throw ValidationError("quantile of empty set");
  if (p < 0.0 || p > 1.0) throw ValidationError("quantile p outside [0,1]");
  std::sort(values.begin(), values.end());
  const double h = (static_cast<double>(values.size()) - 1.0) * p;
  const auto lo = static_cast<std::size_t>(h);
  const double frac = h - static_cast<double>(lo);
  if (frac == 0.0) return values[lo];
  return values[lo] + frac * (values[lo + 1] - values[lo]);
}

AggregateStats aggregate_values(std::vector<double> values) {
  if (values.empty()) throw ValidationError("aggregate of empty set");
  AggregateStats out;
  out.n = static_cast<int>(values.size());
  double sum = 0.0;
  for (const double v : values) sum += v;
  out.mean = sum / out.n;
  double ss = 0.0;
  for (const double v : values) ss += (v - out.mean) * (v - out.mean);
  out.stddev = std::sqrt(ss / out.n);
  std::sort(values.begin(), values.end());
  out.min = values.front();
  out.max = values.back();
  out.q1 = quantile(values, 0.25);
  out.median = quantile(values, 0.5);
  out.q3 = quantile(values, 0.75);
  return out;
}

AggregateProfile aggregate(const std::vector<RunScore>& runs) {
  if (runs.empty()) throw ValidationError("aggregate of zero runs");
  AggregateProfile out;
  out.n_runs = static_cast<int>(runs.size());
  for (int d = 0; d < 4; ++d) {
    DimensionAggregate& da = out.dimensions[d];
    da.dimension = kAllDimensions[d];
    std::vector<double> percents;
    for (const auto& run : runs) {
      const DimensionScore& ds = run.dimensions[d];
      if (ds.unscorable) {
        da.n_unscorable += 1;
      } else {
        percents.push_back(ds.first_pole_percent);
      }
    }
    if (percents.empty()) {
      out.majority_type += '?';
      continue;
    }
    da.percent = aggregate_values(std::move(percents));
    out.majority_type += pole_letter(da.percent.mean > 50.0
                                         ? first_pole(da.dimension)
                                         : second_pole(da.dimension));
  }
  return out;
}

AggregateProfile aggregate(const std::vector<AssessmentRun>& runs,
                           const Scale& scale) {
  std::vector<RunScore> scores;
  scores.reserve(runs.size());
  for (const auto& run : runs) scores.push_back(score_run(run, scale));
  return aggregate(scores);
}

std::vector<std::optional<int>> modal_vector(
    const std::vector<const AssessmentRun*>& batch, const Scale& scale) {
  std::vector<std::optional<int>> out;
  out.reserve(scale.items.size());
  for (const auto& sitem : scale.items) {
    int first = 0, second = 0;
    for (const AssessmentRun* run : batch) {
      const ItemResult* it = run->find(sitem.item_id);
      if (it == nullptr || !it->choice.pole.has_value()) continue;
      (*it->choice.pole == first_pole(sitem.dimension) ? first : second) += 1;
    }
    if (first == 0 && second == 0) {
      out.push_back(std::nullopt);
    } else {
      out.push_back(second > first ? 1 : 0);  // tie goes to the first pole
    }
  }
  return out;
}

SweepResult reliability_sweep(Respondent& backend,
                              const RespondentConfig& cfg, const Scale& scale,
                              const FactorConfig& factors,
                              const std::vector<int>& n_grid,
                              std::uint64_t seed) {
  for (const int n : n_grid) {
    if (n < 1) throw ValidationError("sweep sizes must be >= 1");
  }
  SweepResult out;
  for (std::size_t gi = 0; gi < n_grid.size(); ++gi) {
    const int n = n_grid[gi];
    std::array<std::vector<const AssessmentRun*>, 2> batches;
    for (int batch = 0; batch < 2; ++batch) {
      for (int i = 0; i < n; ++i) {
        const std::uint64_t run_seed = Rng::derive(
            seed, (static_cast<std::uint64_t>(gi) << 1) | batch,
            static_cast<std::uint64_t>(i));
        out.runs.push_back(
            administer_run(scale, factors, backend, cfg, run_seed));
      }
    }
    // pointers resolved only now: the vector above may have reallocated
    std::size_t base = out.runs.size() - 2 * static_cast<std::size_t>(n);
    for (int batch = 0; batch < 2; ++batch) {
      for (int i = 0; i < n; ++i) {
        batches[batch].push_back(&out.runs[base + batch * n + i]);
      }
    }
    const auto ma = modal_vector(batches[0], scale);
    const auto mb = modal_vector(batches[1], scale);
    out.curve.push_back({n, cohen_kappa(ma, mb)});
  }
  return out;
}

}  // namespace persona
