// Copyright (c) 2026 the svdseg authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <memory>
#include <string>
#include <vector>

#include "svdseg/common.hpp"
#include "svdseg/groups.hpp"
#include "svdseg/image.hpp"
#include "svdseg/lora.hpp"
#include "svdseg/param.hpp"
#include "svdseg/svd_adapter.hpp"

namespace svdseg {

// Token convention throughout: activations are (rows x dim) matrices where
// each row is one token; batches are stacked along rows. forward(x, train)
// caches what backward needs only when train is true, so evaluation is
// side-effect free.

double gelu(double v);
double gelu_grad(double v);

// ---------------------------------------------------------------------------
// Linear maps. The encoder's four per-block matrices are held behind this
// interface so adaptation can swap the implementation (dense / SVD / LoRA)
// without touching the block wiring.
// ---------------------------------------------------------------------------

class LinearMap {
 public:
  virtual ~LinearMap() = default;
  virtual Matrix forward(const Matrix& x, bool train) = 0;
  virtual Matrix backward(const Matrix& dy) = 0;
  virtual Eigen::Index in_dim() const = 0;
  virtual Eigen::Index out_dim() const = 0;
  virtual void collect(const std::string& prefix, ParamList& out) = 0;
};

class DenseLinear final : public LinearMap {
 public:
  DenseLinear(Eigen::Index out, Eigen::Index in, std::string weight_group, std::string bias_group);

  void init_normal(std::mt19937_64& rng, double stddev);
  void init_identity();

  Matrix forward(const Matrix& x, bool train) override;
  Matrix backward(const Matrix& dy) override;
  Eigen::Index in_dim() const override { return w_.cols(); }
  Eigen::Index out_dim() const override { return w_.rows(); }
  void collect(const std::string& prefix, ParamList& out) override;

  Matrix& weight() { return w_; }
  const Matrix& weight() const { return w_; }
  Vector& bias() { return b_; }
  const Vector& bias() const { return b_; }
  void set_trainable(bool weight, bool bias) {
    w_trainable_ = weight;
    b_trainable_ = bias;
  }

 private:
  Matrix w_;  // out x in
  Vector b_;  // out
  Matrix w_grad_;
  Vector b_grad_;
  bool w_trainable_ = false;
  bool b_trainable_ = false;
  std::string w_group_, b_group_;
  Matrix x_cache_;
};

// Frozen SVD factors with trainable singular-value scale/shift.
class SvdLinear final : public LinearMap {
 public:
  explicit SvdLinear(SvdAdapterState state);

  Matrix forward(const Matrix& x, bool train) override;
  Matrix backward(const Matrix& dy) override;
  Eigen::Index in_dim() const override { return state_.in_dim(); }
  Eigen::Index out_dim() const override { return state_.out_dim(); }
  void collect(const std::string& prefix, ParamList& out) override;

  const SvdAdapterState& state() const { return state_; }
  SvdAdapterState& state() { return state_; }

 private:
  SvdAdapterState state_;
  Vector scale_grad_, shift_grad_, bias_grad_;
  bool scale_trainable_ = true;
  bool shift_trainable_ = true;
  bool bias_trainable_ = false;  // layer biases stay frozen by default
  bool frozen_ = false;          // shared flag behind U / sigma / Vt refs
  Matrix z_cache_;               // rows x R, input projected onto Vt
  Vector eff_cache_, gate_cache_;
};

// Frozen dense weight plus trainable low-rank update X*Y.
class LoraLinear final : public LinearMap {
 public:
  explicit LoraLinear(LoraAdapterState state);

  Matrix forward(const Matrix& x, bool train) override;
  Matrix backward(const Matrix& dy) override;
  Eigen::Index in_dim() const override { return state_.in_dim(); }
  Eigen::Index out_dim() const override { return state_.out_dim(); }
  void collect(const std::string& prefix, ParamList& out) override;

  const LoraAdapterState& state() const { return state_; }
  LoraAdapterState& state() { return state_; }

 private:
  LoraAdapterState state_;
  Matrix x_grad_, y_grad_;
  bool xy_trainable_ = true;
  bool w_frozen_ = false;
  bool b_frozen_ = false;
  Matrix in_cache_;  // rows x K
  Matrix zr_cache_;  // rows x r
};

// ---------------------------------------------------------------------------
// Normalization, MLP, attention.
// ---------------------------------------------------------------------------

class LayerNorm {
 public:
  LayerNorm(Eigen::Index dim, std::string group);

  Matrix forward(const Matrix& x, bool train);
  Matrix backward(const Matrix& dy);
  void collect(const std::string& prefix, ParamList& out);

  Eigen::Index dim() const { return gamma_.size(); }

 private:
  Vector gamma_, beta_;
  Vector gamma_grad_, beta_grad_;
  bool trainable_ = false;
  std::string group_;
  Matrix xhat_cache_;
  Vector inv_std_cache_;
  static constexpr double kEps = 1e-5;
};

class MlpBlock {
 public:
  MlpBlock(std::unique_ptr<LinearMap> fc1, std::unique_ptr<LinearMap> fc2);

  Matrix forward(const Matrix& x, bool train);
  Matrix backward(const Matrix& dy);
  void collect(const std::string& prefix, ParamList& out);

  LinearMap& fc1() { return *fc1_; }
  LinearMap& fc2() { return *fc2_; }
  std::unique_ptr<LinearMap>& fc1_slot() { return fc1_; }
  std::unique_ptr<LinearMap>& fc2_slot() { return fc2_; }

 private:
  std::unique_ptr<LinearMap> fc1_, fc2_;
  Matrix pre_cache_;
};

// Self attention over per-sample token blocks with a fused qkv projection
// (one adaptable 3D x D matrix, like the encoder it models).
class EncoderAttention {
 public:
  EncoderAttention(Eigen::Index dim, int heads, std::unique_ptr<LinearMap> qkv,
                   std::unique_ptr<LinearMap> proj);

  Matrix forward(const Matrix& x, Eigen::Index batch, Eigen::Index tokens, bool train);
  Matrix backward(const Matrix& dy);
  void collect(const std::string& prefix, ParamList& out);

  LinearMap& qkv() { return *qkv_; }
  LinearMap& proj() { return *proj_; }
  std::unique_ptr<LinearMap>& qkv_slot() { return qkv_; }
  std::unique_ptr<LinearMap>& proj_slot() { return proj_; }
  int heads() const { return heads_; }

 private:
  Eigen::Index dim_;
  int heads_;
  Eigen::Index head_dim_;
  std::unique_ptr<LinearMap> qkv_, proj_;
  // caches
  Eigen::Index batch_ = 0, tokens_ = 0;
  Matrix qkv_cache_;
  std::vector<Matrix> probs_cache_;  // indexed b * heads + h
};

// Cross attention with separate dense q/k/v/out projections (decoder side;
// also serves as token self attention by passing the same rows twice).
class CrossAttention {
 public:
  CrossAttention(Eigen::Index dim, int heads, const std::string& group);

  Matrix forward(const Matrix& q_in, const Matrix& kv_in, Eigen::Index batch, Eigen::Index tq,
                 Eigen::Index tk, bool train);
  // Returns (d_q_in, d_kv_in).
  std::pair<Matrix, Matrix> backward(const Matrix& dy);
  void collect(const std::string& prefix, ParamList& out);
  void init(std::mt19937_64& rng, double stddev);
  void set_trainable(bool t);

 private:
  Eigen::Index dim_;
  int heads_;
  Eigen::Index head_dim_;
  DenseLinear q_, k_, v_, o_;
  Eigen::Index batch_ = 0, tq_ = 0, tk_ = 0;
  Matrix qm_cache_, km_cache_, vm_cache_;
  std::vector<Matrix> probs_cache_;
};

// ---------------------------------------------------------------------------
// Image-side plumbing.
// ---------------------------------------------------------------------------

// Non-overlapping patch flattening followed by a linear projection
// (equivalent to a stride-P conv).
class PatchEmbed {
 public:
  PatchEmbed(int image_size, int patch, int channels, Eigen::Index dim);

  // Tokens for a batch of images, row order (sample, gy * grid + gx).
  Matrix forward(const std::vector<const Image*>& images, bool train);
  // Accumulates weight gradients; input gradients are not needed.
  void backward(const Matrix& d_tokens);
  void collect(const std::string& prefix, ParamList& out);

  int grid() const { return grid_; }
  int patch() const { return patch_; }
  DenseLinear& linear() { return lin_; }

  // Keeps the projection but retargets spatial asserts to a new image size
  // (patch size and channel count are unchanged).
  void set_image_size(int image_size);

 private:
  int image_size_, patch_, channels_, grid_;
  DenseLinear lin_;
};

// 2x2 stride-2 transposed convolution: each input pixel expands into a 2x2
// output block, so taps never overlap and the map is a per-tap GEMM.
class Deconv2x2 {
 public:
  Deconv2x2(Eigen::Index cin, Eigen::Index cout, const std::string& group);

  // x rows ordered (sample, y * grid + x); output grid is 2x the input grid.
  Matrix forward(const Matrix& x, Eigen::Index batch, Eigen::Index grid, bool train);
  Matrix backward(const Matrix& dy);
  void collect(const std::string& prefix, ParamList& out);
  void init(std::mt19937_64& rng, double stddev);
  void set_trainable(bool t) { trainable_ = t; }

 private:
  Eigen::Index cin_, cout_;
  Matrix k_;  // (4*cin) x cout, tap t = dy*2+dx owns rows [t*cin, (t+1)*cin)
  Vector b_;
  Matrix k_grad_;
  Vector b_grad_;
  bool trainable_ = false;
  std::string group_;
  Eigen::Index batch_ = 0, grid_ = 0;
  Matrix x_cache_;
};

// Fixed bilinear upsampling of single-channel maps by an integer factor,
// half-pixel centers. Rows are samples, columns are flattened pixels.
class BilinearUpsample {
 public:
  explicit BilinearUpsample(int factor) : factor_(factor) {}

  Matrix forward(const Matrix& x, int grid);
  Matrix backward(const Matrix& dy);

 private:
  struct Tap {
    int idx[4];
    double w[4];
  };
  void build_taps(int grid);

  int factor_;
  int grid_ = 0;
  std::vector<Tap> taps_;
};

}  // namespace svdseg
