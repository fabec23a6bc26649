// Copyright (c) 2026 the svdseg authors
// SPDX-License-Identifier: Apache-2.0

#include "svdseg/layers.hpp"

#include <cmath>

namespace svdseg {

namespace {
constexpr double kInvSqrt2 = 0.7071067811865475244;
constexpr double kInvSqrt2Pi = 0.3989422804014326779;

void softmax_rows_inplace(Matrix& s) {
  for (Eigen::Index i = 0; i < s.rows(); ++i) {
    auto row = s.row(i).array();
    row -= row.maxCoeff();
    row = row.exp();
    row /= row.sum();
  }
}

// dS for y = softmax(s) given dP = dL/dy and P = y.
Matrix softmax_rows_backward(const Matrix& p, const Matrix& dp) {
  Vector dot = (dp.array() * p.array()).rowwise().sum();
  Matrix ds = dp;
  ds.colwise() -= dot;
  ds.array() *= p.array();
  return ds;
}
}  // namespace

double gelu(double v) { return 0.5 * v * (1.0 + std::erf(v * kInvSqrt2)); }

double gelu_grad(double v) {
  const double cdf = 0.5 * (1.0 + std::erf(v * kInvSqrt2));
  const double pdf = kInvSqrt2Pi * std::exp(-0.5 * v * v);
  return cdf + v * pdf;
}

// ---------------------------------------------------------------------------
// DenseLinear
// ---------------------------------------------------------------------------

DenseLinear::DenseLinear(Eigen::Index out, Eigen::Index in, std::string weight_group,
                         std::string bias_group)
    : w_(Matrix::Zero(out, in)),
      b_(Vector::Zero(out)),
      w_grad_(Matrix::Zero(out, in)),
      b_grad_(Vector::Zero(out)),
      w_group_(std::move(weight_group)),
      b_group_(std::move(bias_group)) {}

void DenseLinear::init_normal(std::mt19937_64& rng, double stddev) {
  std::normal_distribution<double> dist(0.0, stddev);
  for (Eigen::Index j = 0; j < w_.cols(); ++j) {
    for (Eigen::Index i = 0; i < w_.rows(); ++i) w_(i, j) = dist(rng);
  }
  b_.setZero();
}

void DenseLinear::init_identity() {
  if (w_.rows() != w_.cols()) throw ShapeError("init_identity requires a square weight");
  w_.setIdentity();
  b_.setZero();
}

Matrix DenseLinear::forward(const Matrix& x, bool train) {
  if (x.cols() != w_.cols()) throw ShapeError("DenseLinear::forward: input width mismatch");
  if (train) x_cache_ = x;
  Matrix y = x * w_.transpose();
  y.rowwise() += b_.transpose();
  return y;
}

Matrix DenseLinear::backward(const Matrix& dy) {
  w_grad_.noalias() += dy.transpose() * x_cache_;
  b_grad_ += dy.colwise().sum().transpose();
  return dy * w_;
}

void DenseLinear::collect(const std::string& prefix, ParamList& out) {
  out.push_back(make_ref(prefix + ".weight", w_group_, w_, &w_grad_, &w_trainable_));
  out.push_back(make_ref(prefix + ".bias", b_group_, b_, &b_grad_, &b_trainable_));
}

// ---------------------------------------------------------------------------
// SvdLinear
// ---------------------------------------------------------------------------

SvdLinear::SvdLinear(SvdAdapterState state)
    : state_(std::move(state)),
      scale_grad_(Vector::Zero(state_.rank())),
      shift_grad_(Vector::Zero(state_.rank())),
      bias_grad_(Vector::Zero(state_.has_bias() ? state_.out_dim() : 0)) {}

Matrix SvdLinear::forward(const Matrix& x, bool train) {
  if (x.cols() != state_.in_dim()) throw ShapeError("SvdLinear::forward: input width mismatch");
  Matrix z = x * state_.Vt.transpose();
  Vector pre = state_.scale.array() * state_.sigma.array() + state_.shift.array();
  Vector eff = pre.array().max(0.0);
  Matrix y = (z * eff.asDiagonal()) * state_.U.transpose();
  if (state_.has_bias()) y.rowwise() += state_.bias.transpose();
  if (train) {
    z_cache_ = std::move(z);
    eff_cache_ = eff;
    // Subgradient at the kink is 0: fully clamped directions get no update.
    gate_cache_ = (pre.array() > 0.0).cast<double>();
  }
  return y;
}

Matrix SvdLinear::backward(const Matrix& dy) {
  Matrix g = dy * state_.U;  // rows x R
  Vector d_eff = (g.array() * z_cache_.array()).colwise().sum();
  scale_grad_.array() += d_eff.array() * gate_cache_.array() * state_.sigma.array();
  shift_grad_.array() += d_eff.array() * gate_cache_.array();
  if (state_.has_bias()) bias_grad_ += dy.colwise().sum().transpose();
  return (g * eff_cache_.asDiagonal()) * state_.Vt;
}

void SvdLinear::collect(const std::string& prefix, ParamList& out) {
  out.push_back(make_ref<Matrix>(prefix + ".U", kGroupAdapterFrozen, state_.U, nullptr, &frozen_));
  out.push_back(
      make_ref<Vector>(prefix + ".sigma", kGroupAdapterFrozen, state_.sigma, nullptr, &frozen_));
  out.push_back(make_ref<Matrix>(prefix + ".Vt", kGroupAdapterFrozen, state_.Vt, nullptr, &frozen_));
  out.push_back(make_ref<Vector>(prefix + ".scale", kGroupAdapterScale, state_.scale, &scale_grad_,
                                 &scale_trainable_));
  out.push_back(make_ref<Vector>(prefix + ".shift", kGroupAdapterShift, state_.shift, &shift_grad_,
                                 &shift_trainable_));
  if (state_.has_bias()) {
    out.push_back(make_ref<Vector>(prefix + ".bias", kGroupAdapterBias, state_.bias, &bias_grad_,
                                   &bias_trainable_));
  }
}

// ---------------------------------------------------------------------------
// LoraLinear
// ---------------------------------------------------------------------------

LoraLinear::LoraLinear(LoraAdapterState state)
    : state_(std::move(state)),
      x_grad_(Matrix::Zero(state_.X.rows(), state_.X.cols())),
      y_grad_(Matrix::Zero(state_.Y.rows(), state_.Y.cols())) {}

Matrix LoraLinear::forward(const Matrix& x, bool train) {
  if (x.cols() != state_.in_dim()) throw ShapeError("LoraLinear::forward: input width mismatch");
  Matrix zr = x * state_.Y.transpose();
  Matrix y = x * state_.W.transpose() + zr * state_.X.transpose();
  if (state_.has_bias()) y.rowwise() += state_.bias.transpose();
  if (train) {
    in_cache_ = x;
    zr_cache_ = std::move(zr);
  }
  return y;
}

Matrix LoraLinear::backward(const Matrix& dy) {
  Matrix dzr = dy * state_.X;  // rows x r
  x_grad_.noalias() += dy.transpose() * zr_cache_;
  y_grad_.noalias() += dzr.transpose() * in_cache_;
  return dy * state_.W + dzr * state_.Y;
}

void LoraLinear::collect(const std::string& prefix, ParamList& out) {
  out.push_back(
      make_ref<Matrix>(prefix + ".weight", kGroupAdapterFrozen, state_.W, nullptr, &w_frozen_));
  out.push_back(
      make_ref<Matrix>(prefix + ".lora_X", kGroupLora, state_.X, &x_grad_, &xy_trainable_));
  out.push_back(
      make_ref<Matrix>(prefix + ".lora_Y", kGroupLora, state_.Y, &y_grad_, &xy_trainable_));
  if (state_.has_bias()) {
    out.push_back(
        make_ref<Vector>(prefix + ".bias", kGroupAdapterBias, state_.bias, nullptr, &b_frozen_));
  }
}

// ---------------------------------------------------------------------------
// LayerNorm
// ---------------------------------------------------------------------------

LayerNorm::LayerNorm(Eigen::Index dim, std::string group)
    : gamma_(Vector::Ones(dim)),
      beta_(Vector::Zero(dim)),
      gamma_grad_(Vector::Zero(dim)),
      beta_grad_(Vector::Zero(dim)),
      group_(std::move(group)) {}

Matrix LayerNorm::forward(const Matrix& x, bool train) {
  if (x.cols() != dim()) throw ShapeError("LayerNorm::forward: width mismatch");
  Vector mu = x.rowwise().mean();
  Matrix xc = x;
  xc.colwise() -= mu;
  Vector var = xc.array().square().rowwise().mean();
  Vector inv_std = (var.array() + kEps).rsqrt();
  Matrix xhat = xc.array().colwise() * inv_std.array();
  Matrix y = xhat.array().rowwise() * gamma_.transpose().array();
  y.rowwise() += beta_.transpose();
  if (train) {
    xhat_cache_ = std::move(xhat);
    inv_std_cache_ = std::move(inv_std);
    return y;
  }
  return y;
}

Matrix LayerNorm::backward(const Matrix& dy) {
  const Matrix& xhat = xhat_cache_;
  gamma_grad_ += (dy.array() * xhat.array()).colwise().sum().matrix().transpose();
  beta_grad_ += dy.colwise().sum().transpose();
  Matrix dxhat = dy.array().rowwise() * gamma_.transpose().array();
  Vector m1 = dxhat.rowwise().mean();
  Vector m2 = (dxhat.array() * xhat.array()).rowwise().mean();
  Matrix dx = dxhat;
  dx.colwise() -= m1;
  dx.array() -= xhat.array().colwise() * m2.array();
  dx.array().colwise() *= inv_std_cache_.array();
  return dx;
}

void LayerNorm::collect(const std::string& prefix, ParamList& out) {
  out.push_back(make_ref<Vector>(prefix + ".gamma", group_, gamma_, &gamma_grad_, &trainable_));
  out.push_back(make_ref<Vector>(prefix + ".beta", group_, beta_, &beta_grad_, &trainable_));
}

// ---------------------------------------------------------------------------
// MlpBlock
// ---------------------------------------------------------------------------

MlpBlock::MlpBlock(std::unique_ptr<LinearMap> fc1, std::unique_ptr<LinearMap> fc2)
    : fc1_(std::move(fc1)), fc2_(std::move(fc2)) {}

Matrix MlpBlock::forward(const Matrix& x, bool train) {
  Matrix pre = fc1_->forward(x, train);
  Matrix h = pre.unaryExpr([](double v) { return gelu(v); });
  if (train) pre_cache_ = std::move(pre);
  return fc2_->forward(h, train);
}

Matrix MlpBlock::backward(const Matrix& dy) {
  Matrix dh = fc2_->backward(dy);
  Matrix dpre = dh.array() * pre_cache_.unaryExpr([](double v) { return gelu_grad(v); }).array();
  return fc1_->backward(dpre);
}

void MlpBlock::collect(const std::string& prefix, ParamList& out) {
  fc1_->collect(prefix + ".fc1", out);
  fc2_->collect(prefix + ".fc2", out);
}

// ---------------------------------------------------------------------------
// EncoderAttention
// ---------------------------------------------------------------------------

EncoderAttention::EncoderAttention(Eigen::Index dim, int heads, std::unique_ptr<LinearMap> qkv,
                                   std::unique_ptr<LinearMap> proj)
    : dim_(dim), heads_(heads), head_dim_(dim / heads), qkv_(std::move(qkv)), proj_(std::move(proj)) {
  if (dim % heads != 0) throw ConfigError("attention dim must be divisible by heads");
}

Matrix EncoderAttention::forward(const Matrix& x, Eigen::Index batch, Eigen::Index tokens,
                                 bool train) {
  if (x.rows() != batch * tokens || x.cols() != dim_) {
    throw ShapeError("EncoderAttention::forward: bad input shape");
  }
  Matrix qkv = qkv_->forward(x, train);  // (B*T) x 3D
  Matrix heads_out(x.rows(), dim_);
  if (train) probs_cache_.assign(static_cast<std::size_t>(batch * heads_), Matrix());
  const double inv_s = 1.0 / std::sqrt(static_cast<double>(head_dim_));
  for (Eigen::Index b = 0; b < batch; ++b) {
    const Eigen::Index r0 = b * tokens;
    for (int h = 0; h < heads_; ++h) {
      auto q = qkv.block(r0, h * head_dim_, tokens, head_dim_);
      auto k = qkv.block(r0, dim_ + h * head_dim_, tokens, head_dim_);
      auto v = qkv.block(r0, 2 * dim_ + h * head_dim_, tokens, head_dim_);
      Matrix s = (q * k.transpose()) * inv_s;
      softmax_rows_inplace(s);
      heads_out.block(r0, h * head_dim_, tokens, head_dim_).noalias() = s * v;
      if (train) probs_cache_[static_cast<std::size_t>(b * heads_ + h)] = std::move(s);
    }
  }
  if (train) {
    qkv_cache_ = std::move(qkv);
    batch_ = batch;
    tokens_ = tokens;
  }
  return proj_->forward(heads_out, train);
}

Matrix EncoderAttention::backward(const Matrix& dy) {
  Matrix d_heads = proj_->backward(dy);
  Matrix d_qkv = Matrix::Zero(dy.rows(), 3 * dim_);
  const double inv_s = 1.0 / std::sqrt(static_cast<double>(head_dim_));
  for (Eigen::Index b = 0; b < batch_; ++b) {
    const Eigen::Index r0 = b * tokens_;
    for (int h = 0; h < heads_; ++h) {
      const Matrix& p = probs_cache_[static_cast<std::size_t>(b * heads_ + h)];
      auto q = qkv_cache_.block(r0, h * head_dim_, tokens_, head_dim_);
      auto k = qkv_cache_.block(r0, dim_ + h * head_dim_, tokens_, head_dim_);
      auto v = qkv_cache_.block(r0, 2 * dim_ + h * head_dim_, tokens_, head_dim_);
      auto d_o = d_heads.block(r0, h * head_dim_, tokens_, head_dim_);
      Matrix dp = d_o * v.transpose();
      Matrix ds = softmax_rows_backward(p, dp) * inv_s;
      d_qkv.block(r0, h * head_dim_, tokens_, head_dim_).noalias() = ds * k;
      d_qkv.block(r0, dim_ + h * head_dim_, tokens_, head_dim_).noalias() = ds.transpose() * q;
      d_qkv.block(r0, 2 * dim_ + h * head_dim_, tokens_, head_dim_).noalias() = p.transpose() * d_o;
    }
  }
  return qkv_->backward(d_qkv);
}

void EncoderAttention::collect(const std::string& prefix, ParamList& out) {
  qkv_->collect(prefix + ".qkv", out);
  proj_->collect(prefix + ".proj", out);
}

// ---------------------------------------------------------------------------
// CrossAttention
// ---------------------------------------------------------------------------

CrossAttention::CrossAttention(Eigen::Index dim, int heads, const std::string& group)
    : dim_(dim),
      heads_(heads),
      head_dim_(dim / heads),
      q_(dim, dim, group, group),
      k_(dim, dim, group, group),
      v_(dim, dim, group, group),
      o_(dim, dim, group, group) {
  if (dim % heads != 0) throw ConfigError("attention dim must be divisible by heads");
}

void CrossAttention::init(std::mt19937_64& rng, double stddev) {
  q_.init_normal(rng, stddev);
  k_.init_normal(rng, stddev);
  v_.init_normal(rng, stddev);
  o_.init_normal(rng, stddev);
}

void CrossAttention::set_trainable(bool t) {
  q_.set_trainable(t, t);
  k_.set_trainable(t, t);
  v_.set_trainable(t, t);
  o_.set_trainable(t, t);
}

Matrix CrossAttention::forward(const Matrix& q_in, const Matrix& kv_in, Eigen::Index batch,
                               Eigen::Index tq, Eigen::Index tk, bool train) {
  if (q_in.rows() != batch * tq || kv_in.rows() != batch * tk) {
    throw ShapeError("CrossAttention::forward: bad input shape");
  }
  Matrix qm = q_.forward(q_in, train);
  Matrix km = k_.forward(kv_in, train);
  Matrix vm = v_.forward(kv_in, train);
  Matrix heads_out(batch * tq, dim_);
  if (train) probs_cache_.assign(static_cast<std::size_t>(batch * heads_), Matrix());
  const double inv_s = 1.0 / std::sqrt(static_cast<double>(head_dim_));
  for (Eigen::Index b = 0; b < batch; ++b) {
    for (int h = 0; h < heads_; ++h) {
      auto q = qm.block(b * tq, h * head_dim_, tq, head_dim_);
      auto k = km.block(b * tk, h * head_dim_, tk, head_dim_);
      auto v = vm.block(b * tk, h * head_dim_, tk, head_dim_);
      Matrix s = (q * k.transpose()) * inv_s;
      softmax_rows_inplace(s);
      heads_out.block(b * tq, h * head_dim_, tq, head_dim_).noalias() = s * v;
      if (train) probs_cache_[static_cast<std::size_t>(b * heads_ + h)] = std::move(s);
    }
  }
  if (train) {
    qm_cache_ = std::move(qm);
    km_cache_ = std::move(km);
    vm_cache_ = std::move(vm);
    batch_ = batch;
    tq_ = tq;
    tk_ = tk;
  }
  return o_.forward(heads_out, train);
}

std::pair<Matrix, Matrix> CrossAttention::backward(const Matrix& dy) {
  Matrix d_heads = o_.backward(dy);
  Matrix dqm = Matrix::Zero(batch_ * tq_, dim_);
  Matrix dkm = Matrix::Zero(batch_ * tk_, dim_);
  Matrix dvm = Matrix::Zero(batch_ * tk_, dim_);
  const double inv_s = 1.0 / std::sqrt(static_cast<double>(head_dim_));
  for (Eigen::Index b = 0; b < batch_; ++b) {
    for (int h = 0; h < heads_; ++h) {
      const Matrix& p = probs_cache_[static_cast<std::size_t>(b * heads_ + h)];
      auto q = qm_cache_.block(b * tq_, h * head_dim_, tq_, head_dim_);
      auto k = km_cache_.block(b * tk_, h * head_dim_, tk_, head_dim_);
      auto v = vm_cache_.block(b * tk_, h * head_dim_, tk_, head_dim_);
      auto d_o = d_heads.block(b * tq_, h * head_dim_, tq_, head_dim_);
      Matrix dp = d_o * v.transpose();
      Matrix ds = softmax_rows_backward(p, dp) * inv_s;
      dqm.block(b * tq_, h * head_dim_, tq_, head_dim_).noalias() = ds * k;
      dkm.block(b * tk_, h * head_dim_, tk_, head_dim_).noalias() = ds.transpose() * q;
      dvm.block(b * tk_, h * head_dim_, tk_, head_dim_).noalias() = p.transpose() * d_o;
    }
  }
  Matrix d_q_in = q_.backward(dqm);
  Matrix d_kv_in = k_.backward(dkm) + v_.backward(dvm);
  return {std::move(d_q_in), std::move(d_kv_in)};
}

void CrossAttention::collect(const std::string& prefix, ParamList& out) {
  q_.collect(prefix + ".q", out);
  k_.collect(prefix + ".k", out);
  v_.collect(prefix + ".v", out);
  o_.collect(prefix + ".out", out);
}

// ---------------------------------------------------------------------------
// PatchEmbed
// ---------------------------------------------------------------------------

PatchEmbed::PatchEmbed(int image_size, int patch, int channels, Eigen::Index dim)
    : image_size_(image_size),
      patch_(patch),
      channels_(channels),
      grid_(image_size / patch),
      lin_(dim, static_cast<Eigen::Index>(patch) * patch * channels, kGroupPatchEmbed,
           kGroupPatchEmbed) {
  if (image_size % patch != 0) {
    throw ConfigError("image size must be divisible by the patch size");
  }
}

void PatchEmbed::set_image_size(int image_size) {
  if (image_size % patch_ != 0) {
    throw ConfigError("image size must be divisible by the patch size");
  }
  image_size_ = image_size;
  grid_ = image_size / patch_;
}

Matrix PatchEmbed::forward(const std::vector<const Image*>& images, bool train) {
  const Eigen::Index batch = static_cast<Eigen::Index>(images.size());
  const Eigen::Index tokens = static_cast<Eigen::Index>(grid_) * grid_;
  const Eigen::Index flat = static_cast<Eigen::Index>(patch_) * patch_ * channels_;
  Matrix patches(batch * tokens, flat);
  for (Eigen::Index b = 0; b < batch; ++b) {
    const Image& img = *images[static_cast<std::size_t>(b)];
    if (img.h != image_size_ || img.w != image_size_ || img.c != channels_) {
      throw ShapeError("PatchEmbed::forward: image does not match the configured size");
    }
    for (int gy = 0; gy < grid_; ++gy) {
      for (int gx = 0; gx < grid_; ++gx) {
        const Eigen::Index row = b * tokens + gy * grid_ + gx;
        Eigen::Index col = 0;
        for (int py = 0; py < patch_; ++py) {
          for (int px = 0; px < patch_; ++px) {
            for (int ch = 0; ch < channels_; ++ch) {
              patches(row, col++) = img.at(gy * patch_ + py, gx * patch_ + px, ch);
            }
          }
        }
      }
    }
  }
  return lin_.forward(patches, train);
}

void PatchEmbed::backward(const Matrix& d_tokens) { lin_.backward(d_tokens); }

void PatchEmbed::collect(const std::string& prefix, ParamList& out) { lin_.collect(prefix, out); }

// ---------------------------------------------------------------------------
// Deconv2x2
// ---------------------------------------------------------------------------

Deconv2x2::Deconv2x2(Eigen::Index cin, Eigen::Index cout, const std::string& group)
    : cin_(cin),
      cout_(cout),
      k_(Matrix::Zero(4 * cin, cout)),
      b_(Vector::Zero(cout)),
      k_grad_(Matrix::Zero(4 * cin, cout)),
      b_grad_(Vector::Zero(cout)),
      group_(group) {}

void Deconv2x2::init(std::mt19937_64& rng, double stddev) {
  std::normal_distribution<double> dist(0.0, stddev);
  for (Eigen::Index j = 0; j < k_.cols(); ++j) {
    for (Eigen::Index i = 0; i < k_.rows(); ++i) k_(i, j) = dist(rng);
  }
  b_.setZero();
}

Matrix Deconv2x2::forward(const Matrix& x, Eigen::Index batch, Eigen::Index grid, bool train) {
  if (x.rows() != batch * grid * grid || x.cols() != cin_) {
    throw ShapeError("Deconv2x2::forward: bad input shape");
  }
  const Eigen::Index og = 2 * grid;
  Matrix y(batch * og * og, cout_);
  for (int t = 0; t < 4; ++t) {
    const int dy = t / 2, dx = t % 2;
    // Taps never overlap, so every output pixel is written exactly once and
    // carries the full bias.
    Matrix yt = x * k_.block(t * cin_, 0, cin_, cout_);
    yt.rowwise() += b_.transpose();
    for (Eigen::Index b = 0; b < batch; ++b) {
      for (Eigen::Index gy = 0; gy < grid; ++gy) {
        for (Eigen::Index gx = 0; gx < grid; ++gx) {
          y.row(b * og * og + (2 * gy + dy) * og + (2 * gx + dx)) =
              yt.row(b * grid * grid + gy * grid + gx);
        }
      }
    }
  }
  if (train) {
    x_cache_ = x;
    batch_ = batch;
    grid_ = grid;
  }
  return y;
}

Matrix Deconv2x2::backward(const Matrix& dy) {
  const Eigen::Index og = 2 * grid_;
  Matrix dx = Matrix::Zero(batch_ * grid_ * grid_, cin_);
  for (int t = 0; t < 4; ++t) {
    const int oy = t / 2, ox = t % 2;
    Matrix dt(batch_ * grid_ * grid_, cout_);
    for (Eigen::Index b = 0; b < batch_; ++b) {
      for (Eigen::Index gy = 0; gy < grid_; ++gy) {
        for (Eigen::Index gx = 0; gx < grid_; ++gx) {
          dt.row(b * grid_ * grid_ + gy * grid_ + gx) =
              dy.row(b * og * og + (2 * gy + oy) * og + (2 * gx + ox));
        }
      }
    }
    k_grad_.block(t * cin_, 0, cin_, cout_).noalias() += x_cache_.transpose() * dt;
    b_grad_ += dt.colwise().sum().transpose();
    dx.noalias() += dt * k_.block(t * cin_, 0, cin_, cout_).transpose();
  }
  return dx;
}

void Deconv2x2::collect(const std::string& prefix, ParamList& out) {
  out.push_back(make_ref<Matrix>(prefix + ".kernel", group_, k_, &k_grad_, &trainable_));
  out.push_back(make_ref<Vector>(prefix + ".bias", group_, b_, &b_grad_, &trainable_));
}

// ---------------------------------------------------------------------------
// BilinearUpsample
// ---------------------------------------------------------------------------

void BilinearUpsample::build_taps(int grid) {
  grid_ = grid;
  const int out = grid * factor_;
  taps_.assign(static_cast<std::size_t>(out) * out, Tap{});
  auto axis = [&](int p, int& i0, int& i1, double& f) {
    double src = (p + 0.5) / factor_ - 0.5;
    if (src < 0) src = 0;
    if (src > grid - 1) src = grid - 1;
    i0 = static_cast<int>(std::floor(src));
    i1 = std::min(i0 + 1, grid - 1);
    f = src - i0;
  };
  for (int y = 0; y < out; ++y) {
    int y0, y1;
    double fy;
    axis(y, y0, y1, fy);
    for (int x = 0; x < out; ++x) {
      int x0, x1;
      double fx;
      axis(x, x0, x1, fx);
      Tap& t = taps_[static_cast<std::size_t>(y) * out + x];
      t.idx[0] = y0 * grid + x0;
      t.idx[1] = y0 * grid + x1;
      t.idx[2] = y1 * grid + x0;
      t.idx[3] = y1 * grid + x1;
      t.w[0] = (1 - fy) * (1 - fx);
      t.w[1] = (1 - fy) * fx;
      t.w[2] = fy * (1 - fx);
      t.w[3] = fy * fx;
    }
  }
}

Matrix BilinearUpsample::forward(const Matrix& x, int grid) {
  if (x.cols() != static_cast<Eigen::Index>(grid) * grid) {
    throw ShapeError("BilinearUpsample::forward: bad input width");
  }
  if (grid != grid_) build_taps(grid);
  const Eigen::Index n = static_cast<Eigen::Index>(taps_.size());
  Matrix y(x.rows(), n);
  for (Eigen::Index b = 0; b < x.rows(); ++b) {
    for (Eigen::Index p = 0; p < n; ++p) {
      const Tap& t = taps_[static_cast<std::size_t>(p)];
      y(b, p) = t.w[0] * x(b, t.idx[0]) + t.w[1] * x(b, t.idx[1]) + t.w[2] * x(b, t.idx[2]) +
                t.w[3] * x(b, t.idx[3]);
    }
  }
  return y;
}

Matrix BilinearUpsample::backward(const Matrix& dy) {
  Matrix dx = Matrix::Zero(dy.rows(), static_cast<Eigen::Index>(grid_) * grid_);
  for (Eigen::Index b = 0; b < dy.rows(); ++b) {
    for (Eigen::Index p = 0; p < dy.cols(); ++p) {
      const Tap& t = taps_[static_cast<std::size_t>(p)];
      const double g = dy(b, p);
      dx(b, t.idx[0]) += t.w[0] * g;
      dx(b, t.idx[1]) += t.w[1] * g;
      dx(b, t.idx[2]) += t.w[2] * g;
      dx(b, t.idx[3]) += t.w[3] * g;
    }
  }
  return dx;
}

}  // namespace svdseg
