// Copyright (c) 2026 the svdseg authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "svdseg/common.hpp"
#include "svdseg/image.hpp"

namespace svdseg {

enum class Domain { kSource, kTarget };

std::string domain_name(Domain d);

// Ordered class-name -> id map, shipped with every dataset as a
// "name<TAB>id" text file.
struct LabelMap {
  std::vector<std::pair<std::string, int>> entries;

  bool contains(const std::string& name) const;
  std::vector<std::string> names() const;
  static LabelMap load(const std::filesystem::path& file);
  void save(const std::filesystem::path& file) const;
};

// One (image, prompt) query with its ground-truth mask. The mask is all-zero
// when the prompted class is absent from the image.
struct SegSample {
  Image image;
  std::string prompt;
  Mask mask;
  std::string sample_id;
  Domain domain = Domain::kSource;
};

struct Dataset {
  std::vector<SegSample> samples;
  LabelMap labels;
};

// Appearance-level distribution shift. Applying it to a sample touches only
// the image; masks are never modified. Shape deformation acts at generation
// time (deformed shapes come with exact masks), not here.
struct DomainShiftSpec {
  bool invert = false;        // v -> 1 - v
  double noise_amp = 0.0;     // uniform pixel noise amplitude
  double grad_amp = 0.0;      // linear background gradient amplitude
  double deform = 0.0;        // shape deformation magnitude in [0, 1]
};

struct GenSpec {
  int image_size = 128;
  int channels = 3;
  int min_shapes = 2;
  int max_shapes = 4;  // expected 3 of 4 classes present => ~25% blank pairs
  double min_radius_frac = 0.10;
  double max_radius_frac = 0.18;
  int max_retries = 100;
  Domain domain = Domain::kSource;
  DomainShiftSpec shift;  // applied when domain == kTarget

  static GenSpec source_default();
  static GenSpec target_default();
};

// The four-class shapes label map used by generated corpora.
LabelMap shapes_label_map();

// Deterministic synthetic corpus: each of `n_images` images holds 2-4
// non-overlapping shapes, and one sample is emitted per (image, label) pair,
// blank mask when the label is absent. Throws DataError if shape placement
// keeps colliding past max_retries.
Dataset generate(const GenSpec& spec, int n_images, std::uint64_t seed);

// In-place appearance shift of one sample (image only).
void apply_shift(SegSample& sample, const DomainShiftSpec& shift, std::mt19937_64& rng);

// On-disk layout: images/<id>.png, masks/<id>/<class>.png (present classes
// only; a missing file means blank), labels.tsv.
void write_dataset(const Dataset& ds, const std::filesystem::path& root);
Dataset ingest(const std::filesystem::path& root);

}  // namespace svdseg
