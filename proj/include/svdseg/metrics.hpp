// Copyright (c) 2026 the svdseg authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <map>
#include <string>
#include <vector>

#include "svdseg/data.hpp"
#include "svdseg/model.hpp"
#include "svdseg/text_prompt.hpp"

namespace svdseg {

// Dice similarity of two binary masks, with the blank-mask convention:
// two empty masks score 1, an empty vs non-empty pair scores 0 through the
// plain 2|P&G| / (|P|+|G|) formula.
double dice(const Mask& pred, const Mask& gt);

struct SampleScore {
  std::string sample_id;
  std::string label;
  double dsc = 0.0;
  bool gt_blank = false;
  double pred_fg_fraction = 0.0;  // predicted foreground pixels / total
};

struct DiceResult {
  std::vector<SampleScore> per_sample;         // sorted by (sample_id, label)
  std::map<std::string, double> per_class;     // mean dsc per class
  double average = 0.0;                        // unweighted mean over classes

  // Blank-prompt behavior over the absent-class queries.
  std::map<std::string, double> per_class_blank_dsc;  // dsc averaged over blank-gt subset
  double blank_dsc_average = 0.0;
  double blank_fg_fraction = 0.0;  // predicted foreground fraction on blank-gt queries
  int blank_cases = 0;
};

struct EvalOptions {
  // The protocol queries every dataset label on every image so that
  // absent-class (blank ground truth) cases arise; switch off to score
  // present classes only.
  bool include_absent = true;
  int batch = 16;
};

// Runs the model over every (image, label) query in the dataset, binarizes
// at probability 0.5 and aggregates per class. Deterministic and invariant
// to the order of samples in the dataset.
DiceResult evaluate(PromptSegModel& model, const TextEmbedder& embedder, const Dataset& dataset,
                    const EvalOptions& options = {});

// Aggregates precomputed per-sample scores into a DiceResult (shared by
// evaluate and by tests that score mask pairs directly).
DiceResult aggregate_scores(std::vector<SampleScore> scores);

// Two-sided Wilcoxon signed-rank test for paired scores; exact distribution
// for n <= 25 effective pairs, normal approximation beyond. Ties in |d| get
// midranks; zero differences are dropped. Returns 1.0 when nothing differs.
// Throws DataError when fewer than 5 pairs are supplied.
double paired_significance(const std::vector<double>& a, const std::vector<double>& b);

}  // namespace svdseg
