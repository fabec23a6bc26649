// Copyright (c) 2026 the svdseg authors
// SPDX-License-Identifier: Apache-2.0

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <filesystem>
#include <fstream>

#include "svdseg/data.hpp"
#include "svdseg/png_io.hpp"

using namespace svdseg;
namespace fs = std::filesystem;

namespace {

struct TempDir {
  fs::path path;
  TempDir() {
    path = fs::temp_directory_path() /
           ("svdseg-data-test-" + std::to_string(std::random_device{}()));
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
};

double image_mean(const Image& img) {
  double sum = 0;
  for (double v : img.v) sum += v;
  return sum / static_cast<double>(img.v.size());
}

}  // namespace

TEST_SUITE("generate") {

TEST_CASE("one sample per (image, label) pair with exact masks by construction") {
  GenSpec spec = GenSpec::source_default();
  spec.image_size = 64;
  Dataset ds = generate(spec, 3, 42);
  CHECK(ds.labels.entries.size() == 4);
  CHECK(ds.samples.size() == 3 * 4);

  for (const SegSample& s : ds.samples) {
    CHECK(s.image.h == 64);
    CHECK(s.image.w == 64);
    CHECK(s.image.c == 3);
    CHECK(s.mask.h == 64);
    CHECK(s.mask.w == 64);
    CHECK(ds.labels.contains(s.prompt));
    for (double v : s.image.v) {
      CHECK(v >= 0.0);
      CHECK(v <= 1.0);
    }
    // channels are replicated
    for (int y = 0; y < s.image.h; y += 7) {
      for (int x = 0; x < s.image.w; x += 7) {
        CHECK(s.image.at(y, x, 0) == s.image.at(y, x, 1));
        CHECK(s.image.at(y, x, 0) == s.image.at(y, x, 2));
      }
    }
  }

  // each image appears once per label, and the per-image masks are disjoint
  for (int i = 0; i < 3; ++i) {
    std::size_t base = static_cast<std::size_t>(i) * 4;
    const std::string id = ds.samples[base].sample_id;
    Mask unionm(64, 64);
    std::size_t total_fg = 0;
    for (std::size_t l = 0; l < 4; ++l) {
      CHECK(ds.samples[base + l].sample_id == id);
      CHECK(ds.samples[base + l].prompt == ds.labels.entries[l].first);
      total_fg += ds.samples[base + l].mask.foreground();
      for (std::size_t p = 0; p < unionm.v.size(); ++p) {
        unionm.v[p] |= ds.samples[base + l].mask.v[p];
      }
    }
    CHECK(unionm.foreground() == total_fg);  // no overlap between classes
    CHECK(total_fg > 0);                     // at least min_shapes shapes present
  }
}

TEST_CASE("same seed reproduces the corpus bitwise") {
  GenSpec spec = GenSpec::target_default();
  spec.image_size = 64;
  Dataset a = generate(spec, 4, 7);
  Dataset b = generate(spec, 4, 7);
  REQUIRE(a.samples.size() == b.samples.size());
  for (std::size_t i = 0; i < a.samples.size(); ++i) {
    CHECK(a.samples[i].image.v == b.samples[i].image.v);
    CHECK(a.samples[i].mask.v == b.samples[i].mask.v);
    CHECK(a.samples[i].prompt == b.samples[i].prompt);
  }
  Dataset c = generate(spec, 4, 8);
  bool any_diff = false;
  for (std::size_t i = 0; i < a.samples.size() && !any_diff; ++i) {
    any_diff = a.samples[i].image.v != c.samples[i].image.v;
  }
  CHECK(any_diff);
}

TEST_CASE("about a quarter of (image,label) pairs are blank under defaults") {
  GenSpec spec = GenSpec::source_default();
  spec.image_size = 64;
  spec.max_radius_frac = 0.15;  // leave room for four shapes on a small canvas
  Dataset ds = generate(spec, 200, 99);
  std::size_t blank = 0;
  for (const SegSample& s : ds.samples) blank += s.mask.blank();
  const double frac = static_cast<double>(blank) / static_cast<double>(ds.samples.size());
  CHECK(frac > 0.15);
  CHECK(frac < 0.35);
}

TEST_CASE("impossible placement reports a generation error") {
  GenSpec spec = GenSpec::source_default();
  spec.image_size = 48;
  spec.min_shapes = 4;
  spec.max_shapes = 4;
  spec.min_radius_frac = 0.4;  // four shapes of nearly half the image cannot coexist
  spec.max_radius_frac = 0.45;
  spec.max_retries = 25;
  CHECK_THROWS_AS(generate(spec, 1, 1), DataError);
}

TEST_CASE("invalid requests are rejected") {
  GenSpec spec = GenSpec::source_default();
  CHECK_THROWS_AS(generate(spec, 0, 1), DataError);
}

}  // TEST_SUITE

TEST_SUITE("domain_shift") {

TEST_CASE("shift changes image statistics but never mask pixels") {
  GenSpec spec = GenSpec::source_default();
  spec.image_size = 64;
  spec.shift = DomainShiftSpec{};  // start from a clean sample
  Dataset ds = generate(spec, 1, 5);
  SegSample sample = ds.samples.front();
  const Mask mask_before = sample.mask;
  const double mean_before = image_mean(sample.image);

  DomainShiftSpec shift;
  shift.grad_amp = 0.2;
  std::mt19937_64 rng(11);
  apply_shift(sample, shift, rng);

  // a linear 0..amp ramp adds amp/2 on average
  CHECK(image_mean(sample.image) - mean_before == doctest::Approx(0.1).epsilon(0.15));
  CHECK(sample.mask.v == mask_before.v);
}

TEST_CASE("inversion flips the mean around one half") {
  GenSpec spec = GenSpec::source_default();
  spec.image_size = 64;
  spec.shift = DomainShiftSpec{};
  Dataset ds = generate(spec, 1, 6);
  SegSample sample = ds.samples.front();
  const double mean_before = image_mean(sample.image);

  DomainShiftSpec shift;
  shift.invert = true;
  std::mt19937_64 rng(12);
  apply_shift(sample, shift, rng);
  CHECK(image_mean(sample.image) == doctest::Approx(1.0 - mean_before).epsilon(1e-12));
}

TEST_CASE("target-domain generation deforms shapes but keeps masks exact") {
  GenSpec spec = GenSpec::target_default();
  spec.image_size = 64;
  Dataset ds = generate(spec, 2, 21);
  // shapes are painted with a uniform intensity; after inversion the mask
  // region is uniform too, so mask pixels all share one value per shape
  for (const SegSample& s : ds.samples) {
    if (s.mask.blank()) continue;
    CHECK(s.mask.foreground() > 10);
  }
}

}  // TEST_SUITE

TEST_SUITE("disk_round_trip") {

TEST_CASE("generate -> write -> ingest reproduces masks bit-exactly") {
  GenSpec spec = GenSpec::source_default();
  spec.image_size = 64;
  Dataset ds = generate(spec, 3, 77);

  TempDir tmp;
  write_dataset(ds, tmp.path);
  Dataset back = ingest(tmp.path);

  REQUIRE(back.samples.size() == ds.samples.size());
  REQUIRE(back.labels.entries == ds.labels.entries);
  for (std::size_t i = 0; i < ds.samples.size(); ++i) {
    CHECK(back.samples[i].sample_id == ds.samples[i].sample_id);
    CHECK(back.samples[i].prompt == ds.samples[i].prompt);
    CHECK(back.samples[i].mask.v == ds.samples[i].mask.v);
    // images are 8-bit quantized on disk
    for (std::size_t p = 0; p < ds.samples[i].image.v.size(); ++p) {
      CHECK(std::abs(back.samples[i].image.v[p] - ds.samples[i].image.v[p]) <= 0.5 / 255.0 + 1e-12);
    }
  }
}

TEST_CASE("missing per-class mask file reads as a blank mask") {
  GenSpec spec = GenSpec::source_default();
  spec.image_size = 64;
  Dataset ds = generate(spec, 1, 3);
  TempDir tmp;
  write_dataset(ds, tmp.path);

  // remove one present-class mask; it must come back blank
  std::string removed;
  for (const SegSample& s : ds.samples) {
    if (!s.mask.blank()) {
      fs::remove(tmp.path / "masks" / s.sample_id / (s.prompt + ".png"));
      removed = s.prompt;
      break;
    }
  }
  REQUIRE(!removed.empty());
  Dataset back = ingest(tmp.path);
  for (const SegSample& s : back.samples) {
    if (s.prompt == removed) CHECK(s.mask.blank());
  }
}

TEST_CASE("image without a mask directory is an ingestion error") {
  GenSpec spec = GenSpec::source_default();
  spec.image_size = 64;
  Dataset ds = generate(spec, 2, 4);
  TempDir tmp;
  write_dataset(ds, tmp.path);
  fs::remove_all(tmp.path / "masks" / "img0001");
  CHECK_THROWS_WITH_AS(ingest(tmp.path), doctest::Contains("img0001"), DataError);
}

TEST_CASE("mask size mismatch names the offending file") {
  GenSpec spec = GenSpec::source_default();
  spec.image_size = 64;
  Dataset ds = generate(spec, 1, 9);
  TempDir tmp;
  write_dataset(ds, tmp.path);

  std::string clobbered;
  for (const SegSample& s : ds.samples) {
    if (!s.mask.blank()) {
      Gray8 small;
      small.h = 32;
      small.w = 32;
      small.v.assign(32 * 32, 255);
      write_gray8_png(tmp.path / "masks" / s.sample_id / (s.prompt + ".png"), small);
      clobbered = (tmp.path / "masks" / s.sample_id / (s.prompt + ".png")).string();
      break;
    }
  }
  REQUIRE(!clobbered.empty());
  CHECK_THROWS_WITH_AS(ingest(tmp.path), doctest::Contains(clobbered.c_str()), DataError);
}

TEST_CASE("png round trip is lossless") {
  TempDir tmp;
  Gray8 img;
  img.h = 17;
  img.w = 23;
  img.v.resize(17 * 23);
  for (std::size_t i = 0; i < img.v.size(); ++i) img.v[i] = static_cast<std::uint8_t>(i * 7 % 256);
  write_gray8_png(tmp.path / "t.png", img);
  Gray8 back = read_gray8_png(tmp.path / "t.png");
  CHECK(back.h == img.h);
  CHECK(back.w == img.w);
  CHECK(back.v == img.v);
}

}  // TEST_SUITE
