// Copyright (c) 2026 the svdseg authors
// SPDX-License-Identifier: Apache-2.0

#include "svdseg/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace svdseg {

double dice(const Mask& pred, const Mask& gt) {
  if (pred.h != gt.h || pred.w != gt.w) {
    throw ShapeError("dice: mask shapes differ");
  }
  std::size_t p = 0, g = 0, inter = 0;
  for (std::size_t i = 0; i < pred.v.size(); ++i) {
    const bool pp = pred.v[i] != 0;
    const bool gg = gt.v[i] != 0;
    p += pp;
    g += gg;
    inter += (pp && gg);
  }
  if (p == 0 && g == 0) return 1.0;  // both blank: correct "nothing here" answer
  return 2.0 * static_cast<double>(inter) / static_cast<double>(p + g);
}

DiceResult aggregate_scores(std::vector<SampleScore> scores) {
  // Total order so the floating-point reduction below is independent of the
  // caller's sample order.
  std::sort(scores.begin(), scores.end(), [](const SampleScore& a, const SampleScore& b) {
    if (a.sample_id != b.sample_id) return a.sample_id < b.sample_id;
    if (a.label != b.label) return a.label < b.label;
    if (a.dsc != b.dsc) return a.dsc < b.dsc;
    return a.pred_fg_fraction < b.pred_fg_fraction;
  });

  DiceResult res;
  std::map<std::string, std::pair<double, int>> acc;        // class -> (sum, count)
  std::map<std::string, std::pair<double, int>> blank_acc;  // over gt-blank subset
  double blank_fg = 0.0;
  int blank_n = 0;
  for (const SampleScore& s : scores) {
    auto& [sum, count] = acc[s.label];
    sum += s.dsc;
    count += 1;
    if (s.gt_blank) {
      auto& [bsum, bcount] = blank_acc[s.label];
      bsum += s.dsc;
      bcount += 1;
      blank_fg += s.pred_fg_fraction;
      blank_n += 1;
    }
  }
  for (const auto& [label, sc] : acc) res.per_class[label] = sc.first / sc.second;
  if (!res.per_class.empty()) {
    double total = 0;
    for (const auto& [label, mean] : res.per_class) total += mean;
    res.average = total / static_cast<double>(res.per_class.size());
  }
  for (const auto& [label, sc] : blank_acc) {
    res.per_class_blank_dsc[label] = sc.first / sc.second;
  }
  if (!res.per_class_blank_dsc.empty()) {
    double total = 0;
    for (const auto& [label, mean] : res.per_class_blank_dsc) total += mean;
    res.blank_dsc_average = total / static_cast<double>(res.per_class_blank_dsc.size());
  }
  res.blank_cases = blank_n;
  res.blank_fg_fraction = blank_n > 0 ? blank_fg / blank_n : 0.0;
  res.per_sample = std::move(scores);
  return res;
}

DiceResult evaluate(PromptSegModel& model, const TextEmbedder& embedder, const Dataset& dataset,
                    const EvalOptions& options) {
  for (const SegSample& s : dataset.samples) {
    if (!dataset.labels.contains(s.prompt)) {
      throw EvalError("evaluate: prompt \"" + s.prompt + "\" is not in the label map");
    }
  }

  std::vector<const SegSample*> queries;
  queries.reserve(dataset.samples.size());
  for (const SegSample& s : dataset.samples) {
    if (!options.include_absent && s.mask.blank()) continue;
    queries.push_back(&s);
  }

  std::vector<SampleScore> scores;
  scores.reserve(queries.size());
  const int hw = queries.empty() ? 0 : queries.front()->image.h * queries.front()->image.w;

  for (std::size_t start = 0; start < queries.size(); start += static_cast<std::size_t>(options.batch)) {
    const std::size_t end = std::min(queries.size(), start + static_cast<std::size_t>(options.batch));
    const Eigen::Index b = static_cast<Eigen::Index>(end - start);
    std::vector<const Image*> images(static_cast<std::size_t>(b));
    Matrix prompts(b, embedder.dim());
    for (Eigen::Index i = 0; i < b; ++i) {
      const SegSample& s = *queries[start + static_cast<std::size_t>(i)];
      images[static_cast<std::size_t>(i)] = &s.image;
      prompts.row(i) = embedder.embed(s.prompt).transpose();
    }
    Matrix logits = model.forward_batch(images, prompts, false);
    for (Eigen::Index i = 0; i < b; ++i) {
      const SegSample& s = *queries[start + static_cast<std::size_t>(i)];
      Mask pred(s.image.h, s.image.w);
      for (Eigen::Index p = 0; p < logits.cols(); ++p) pred.v[static_cast<std::size_t>(p)] = logits(i, p) > 0.0;
      SampleScore sc;
      sc.sample_id = s.sample_id;
      sc.label = s.prompt;
      sc.dsc = dice(pred, s.mask);
      sc.gt_blank = s.mask.blank();
      sc.pred_fg_fraction = hw > 0 ? static_cast<double>(pred.foreground()) / hw : 0.0;
      scores.push_back(std::move(sc));
    }
  }
  return aggregate_scores(std::move(scores));
}

// ---------------------------------------------------------------------------
// Wilcoxon signed-rank
// ---------------------------------------------------------------------------

namespace {

// Exact null distribution of W+ for given (doubled, integral) ranks via the
// subset-sum polynomial; counts stay exact in doubles for n <= 25.
double exact_two_sided_p(const std::vector<long>& ranks2, long w2) {
  long max_sum = std::accumulate(ranks2.begin(), ranks2.end(), 0L);
  std::vector<double> counts(static_cast<std::size_t>(max_sum) + 1, 0.0);
  counts[0] = 1.0;
  for (long r : ranks2) {
    for (long s = max_sum; s >= r; --s) {
      counts[static_cast<std::size_t>(s)] += counts[static_cast<std::size_t>(s - r)];
    }
  }
  const double total = std::pow(2.0, static_cast<double>(ranks2.size()));
  double le = 0, ge = 0;
  for (long s = 0; s <= max_sum; ++s) {
    if (s <= w2) le += counts[static_cast<std::size_t>(s)];
    if (s >= w2) ge += counts[static_cast<std::size_t>(s)];
  }
  return std::min(1.0, 2.0 * std::min(le, ge) / total);
}

}  // namespace

double paired_significance(const std::vector<double>& a, const std::vector<double>& b) {
  if (a.size() != b.size()) {
    throw ShapeError("paired_significance: score vectors differ in length");
  }
  if (a.size() < 5) {
    throw DataError("paired_significance: need at least 5 paired scores");
  }

  std::vector<double> diffs;
  diffs.reserve(a.size());
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = a[i] - b[i];
    if (d != 0.0) diffs.push_back(d);
  }
  const std::size_t n = diffs.size();
  if (n == 0) return 1.0;  // identical vectors: no evidence of a difference

  // Midranks of |d|, doubled so ties stay integral.
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(),
            [&](std::size_t i, std::size_t j) { return std::abs(diffs[i]) < std::abs(diffs[j]); });
  std::vector<long> rank2(n, 0);
  std::size_t i = 0;
  while (i < n) {
    std::size_t j = i;
    while (j + 1 < n && std::abs(diffs[order[j + 1]]) == std::abs(diffs[order[i]])) ++j;
    const long r2 = static_cast<long>(i + 1 + j + 1);  // 2 * average rank
    for (std::size_t k = i; k <= j; ++k) rank2[order[k]] = r2;
    i = j + 1;
  }

  long w2 = 0;
  for (std::size_t k = 0; k < n; ++k) {
    if (diffs[k] > 0) w2 += rank2[k];
  }

  if (n <= 25) {
    return exact_two_sided_p(rank2, w2);
  }

  // Normal approximation with tie correction and continuity correction.
  const double nn = static_cast<double>(n);
  const double mean2 = nn * (nn + 1.0) / 2.0;  // doubled scale
  double var4 = nn * (nn + 1.0) * (2.0 * nn + 1.0) / 6.0;  // 4 * variance before ties
  // Tie correction: subtract sum(t^3 - t)/48 in rank units = /12 in doubled^2.
  i = 0;
  std::vector<double> absd(n);
  for (std::size_t k = 0; k < n; ++k) absd[k] = std::abs(diffs[k]);
  std::sort(absd.begin(), absd.end());
  while (i < n) {
    std::size_t j = i;
    while (j + 1 < n && absd[j + 1] == absd[i]) ++j;
    const double t = static_cast<double>(j - i + 1);
    var4 -= (t * t * t - t) / 12.0;
    i = j + 1;
  }
  const double sd2 = std::sqrt(var4);
  if (sd2 <= 0) return 1.0;
  double z = (static_cast<double>(w2) - mean2) / sd2;
  // continuity correction toward the mean (one doubled rank unit = 1)
  if (z > 0) {
    z = std::max(0.0, (static_cast<double>(w2) - 1.0 - mean2)) / sd2;
  } else if (z < 0) {
    z = std::min(0.0, (static_cast<double>(w2) + 1.0 - mean2)) / sd2;
  }
  const double p = std::erfc(std::abs(z) / std::sqrt(2.0));
  return std::min(1.0, p);
}

}  // namespace svdseg
