// Copyright (c) 2026 the svdseg authors
// SPDX-License-Identifier: Apache-2.0

#include "svdseg/model.hpp"

#include <cmath>

namespace svdseg {

namespace {
constexpr double kInitStd = 0.02;

std::unique_ptr<DenseLinear> dense(Eigen::Index out, Eigen::Index in, std::mt19937_64& rng) {
  auto lin = std::make_unique<DenseLinear>(out, in, kGroupEncoderWeight, kGroupEncoderBias);
  lin->init_normal(rng, kInitStd);
  return lin;
}
}  // namespace

void ModelConfig::validate() const {
  if (image_size < 1 || patch < 1 || channels < 1 || dim < 1 || heads < 1 || blocks < 1 ||
      mlp_hidden < 1 || text_dim < 1 || dec_layers < 1 || dec_mlp < 1 || up_mid < 1 || up_out < 1) {
    throw ConfigError("model config: all dimensions must be positive");
  }
  if (image_size % patch != 0) {
    throw ConfigError("model config: image_size must be divisible by patch");
  }
  if (dim % heads != 0) {
    throw ConfigError("model config: dim must be divisible by heads");
  }
  if (patch % 4 != 0) {
    throw ConfigError("model config: patch must be a multiple of 4 (mask head upscales 4x)");
  }
}

std::string wiring_name(Wiring w) {
  switch (w) {
    case Wiring::kDense: return "dense";
    case Wiring::kSvd: return "svd";
    case Wiring::kLora: return "lora";
  }
  return "dense";
}

Wiring wiring_from_name(const std::string& name) {
  if (name == "dense") return Wiring::kDense;
  if (name == "svd") return Wiring::kSvd;
  if (name == "lora") return Wiring::kLora;
  throw ConfigError("unknown wiring: " + name);
}

// ---------------------------------------------------------------------------
// EncoderBlock
// ---------------------------------------------------------------------------

EncoderBlock::EncoderBlock(const ModelConfig& cfg, int index, std::uint64_t seed)
    : n1_(cfg.dim, kGroupLayerNorm),
      n2_(cfg.dim, kGroupLayerNorm),
      attn_(cfg.dim, cfg.heads,
            [&] {
              auto rng = make_rng(seed, "enc.qkv", static_cast<std::uint64_t>(index));
              return dense(3 * cfg.dim, cfg.dim, rng);
            }(),
            [&] {
              auto rng = make_rng(seed, "enc.proj", static_cast<std::uint64_t>(index));
              return dense(cfg.dim, cfg.dim, rng);
            }()),
      mlp_(
          [&] {
            auto rng = make_rng(seed, "enc.mlp1", static_cast<std::uint64_t>(index));
            return dense(cfg.mlp_hidden, cfg.dim, rng);
          }(),
          [&] {
            auto rng = make_rng(seed, "enc.mlp2", static_cast<std::uint64_t>(index));
            return dense(cfg.dim, cfg.mlp_hidden, rng);
          }()) {}

Matrix EncoderBlock::forward(const Matrix& x, Eigen::Index batch, Eigen::Index tokens, bool train) {
  Matrix x1 = x + attn_.forward(n1_.forward(x, train), batch, tokens, train);
  return x1 + mlp_.forward(n2_.forward(x1, train), train);
}

Matrix EncoderBlock::backward(const Matrix& dy) {
  Matrix dx1 = dy + n2_.backward(mlp_.backward(dy));
  return dx1 + n1_.backward(attn_.backward(dx1));
}

void EncoderBlock::collect(const std::string& prefix, ParamList& out) {
  n1_.collect(prefix + ".norm1", out);
  attn_.collect(prefix + ".attn", out);
  n2_.collect(prefix + ".norm2", out);
  mlp_.collect(prefix + ".mlp", out);
}

// ---------------------------------------------------------------------------
// DecoderLayer
// ---------------------------------------------------------------------------

DecoderLayer::DecoderLayer(const ModelConfig& cfg, int index, std::uint64_t seed)
    : nt1_(cfg.dim, kGroupDecoder),
      nt2_(cfg.dim, kGroupDecoder),
      nt3_(cfg.dim, kGroupDecoder),
      ni1_(cfg.dim, kGroupDecoder),
      self_attn_(cfg.dim, cfg.heads, kGroupDecoder),
      token_to_image_(cfg.dim, cfg.heads, kGroupDecoder),
      image_to_token_(cfg.dim, cfg.heads, kGroupDecoder),
      mlp_(std::make_unique<DenseLinear>(cfg.dec_mlp, cfg.dim, kGroupDecoder, kGroupDecoder),
           std::make_unique<DenseLinear>(cfg.dim, cfg.dec_mlp, kGroupDecoder, kGroupDecoder)) {
  auto rng = make_rng(seed, "dec.layer", static_cast<std::uint64_t>(index));
  self_attn_.init(rng, kInitStd);
  token_to_image_.init(rng, kInitStd);
  image_to_token_.init(rng, kInitStd);
  static_cast<DenseLinear&>(mlp_.fc1()).init_normal(rng, kInitStd);
  static_cast<DenseLinear&>(mlp_.fc2()).init_normal(rng, kInitStd);
}

std::pair<Matrix, Matrix> DecoderLayer::forward(const Matrix& tokens, const Matrix& img,
                                                Eigen::Index batch, Eigen::Index img_tokens,
                                                bool train) {
  const Eigen::Index tq = tokens.rows() / batch;
  Matrix tn = nt1_.forward(tokens, train);
  Matrix t1 = tokens + self_attn_.forward(tn, tn, batch, tq, tq, train);
  Matrix t2 = t1 + token_to_image_.forward(nt2_.forward(t1, train), img, batch, tq, img_tokens, train);
  Matrix t3 = t2 + mlp_.forward(nt3_.forward(t2, train), train);
  Matrix img_out =
      img + image_to_token_.forward(ni1_.forward(img, train), t3, batch, img_tokens, tq, train);
  return {std::move(t3), std::move(img_out)};
}

std::pair<Matrix, Matrix> DecoderLayer::backward(const Matrix& d_tokens, const Matrix& d_img) {
  auto [dq_img, dkv_tok] = image_to_token_.backward(d_img);
  Matrix d_img_in = d_img + ni1_.backward(dq_img);
  Matrix dt3 = d_tokens + dkv_tok;

  Matrix dt2 = dt3 + nt3_.backward(mlp_.backward(dt3));

  auto [dq_tok, dkv_img] = token_to_image_.backward(dt2);
  Matrix dt1 = dt2 + nt2_.backward(dq_tok);
  d_img_in += dkv_img;

  auto [dq_self, dkv_self] = self_attn_.backward(dt1);
  Matrix d_tokens_in = dt1 + nt1_.backward(dq_self + dkv_self);
  return {std::move(d_tokens_in), std::move(d_img_in)};
}

void DecoderLayer::collect(const std::string& prefix, ParamList& out) {
  nt1_.collect(prefix + ".norm_self", out);
  self_attn_.collect(prefix + ".self", out);
  nt2_.collect(prefix + ".norm_t2i", out);
  token_to_image_.collect(prefix + ".t2i", out);
  nt3_.collect(prefix + ".norm_mlp", out);
  mlp_.collect(prefix + ".mlp", out);
  ni1_.collect(prefix + ".norm_i2t", out);
  image_to_token_.collect(prefix + ".i2t", out);
}

void DecoderLayer::set_trainable(bool t) {
  self_attn_.set_trainable(t);
  token_to_image_.set_trainable(t);
  image_to_token_.set_trainable(t);
  static_cast<DenseLinear&>(mlp_.fc1()).set_trainable(t, t);
  static_cast<DenseLinear&>(mlp_.fc2()).set_trainable(t, t);
}

// ---------------------------------------------------------------------------
// MaskDecoder
// ---------------------------------------------------------------------------

MaskDecoder::MaskDecoder(const ModelConfig& cfg, std::uint64_t seed)
    : dim_(cfg.dim),
      mask_token_(Vector::Zero(cfg.dim)),
      mask_token_grad_(Vector::Zero(cfg.dim)),
      final_norm_(cfg.dim, kGroupDecoder),
      hyper_(std::make_unique<DenseLinear>(cfg.dim, cfg.dim, kGroupDecoder, kGroupDecoder),
             std::make_unique<DenseLinear>(cfg.up_out, cfg.dim, kGroupDecoder, kGroupDecoder)),
      up1_(cfg.dim, cfg.up_mid, kGroupDecoder),
      up2_(cfg.up_mid, cfg.up_out, kGroupDecoder) {
  auto rng = make_rng(seed, "dec.head");
  std::normal_distribution<double> dist(0.0, kInitStd);
  for (Eigen::Index i = 0; i < mask_token_.size(); ++i) mask_token_[i] = dist(rng);
  static_cast<DenseLinear&>(hyper_.fc1()).init_normal(rng, kInitStd);
  static_cast<DenseLinear&>(hyper_.fc2()).init_normal(rng, kInitStd);
  up1_.init(rng, kInitStd);
  up2_.init(rng, kInitStd);
  layers_.reserve(static_cast<std::size_t>(cfg.dec_layers));
  for (int i = 0; i < cfg.dec_layers; ++i) layers_.emplace_back(cfg, i, seed);
}

Matrix MaskDecoder::forward(const Matrix& img, const Matrix& prompt, Eigen::Index batch, int grid,
                            bool train) {
  if (prompt.rows() != batch || prompt.cols() != dim_) {
    throw ShapeError("MaskDecoder::forward: bad prompt shape");
  }
  Matrix tokens(batch * 2, dim_);
  for (Eigen::Index b = 0; b < batch; ++b) {
    tokens.row(2 * b) = mask_token_.transpose();
    tokens.row(2 * b + 1) = prompt.row(b);
  }
  Matrix cur_img = img;
  const Eigen::Index t_img = static_cast<Eigen::Index>(grid) * grid;
  for (DecoderLayer& layer : layers_) {
    auto [t, im] = layer.forward(tokens, cur_img, batch, t_img, train);
    tokens = std::move(t);
    cur_img = std::move(im);
  }

  Matrix mask_state(batch, dim_);
  for (Eigen::Index b = 0; b < batch; ++b) mask_state.row(b) = tokens.row(2 * b);
  Matrix hvec = hyper_.forward(final_norm_.forward(mask_state, train), train);  // B x up_out

  Matrix u1 = up1_.forward(cur_img, batch, grid, train);
  Matrix g1 = u1.unaryExpr([](double v) { return gelu(v); });
  Matrix u2 = up2_.forward(g1, batch, 2 * grid, train);
  Matrix feats = u2.unaryExpr([](double v) { return gelu(v); });  // (B*(4G)^2) x up_out

  const Eigen::Index pix = static_cast<Eigen::Index>(4 * grid) * (4 * grid);
  Matrix logits(batch, pix);
  for (Eigen::Index b = 0; b < batch; ++b) {
    logits.row(b) = (feats.middleRows(b * pix, pix) * hvec.row(b).transpose()).transpose();
  }
  if (train) {
    batch_ = batch;
    grid_ = grid;
    feats_cache_ = std::move(feats);
    hvec_cache_ = std::move(hvec);
    up1_pre_ = std::move(u1);
    up2_pre_ = std::move(u2);
  }
  return logits;
}

std::pair<Matrix, Matrix> MaskDecoder::backward(const Matrix& d_logits) {
  const Eigen::Index pix = static_cast<Eigen::Index>(4 * grid_) * (4 * grid_);
  Matrix d_feats(batch_ * pix, feats_cache_.cols());
  Matrix d_hvec(batch_, hvec_cache_.cols());
  for (Eigen::Index b = 0; b < batch_; ++b) {
    d_feats.middleRows(b * pix, pix).noalias() =
        d_logits.row(b).transpose() * hvec_cache_.row(b);
    d_hvec.row(b).noalias() = d_logits.row(b) * feats_cache_.middleRows(b * pix, pix);
  }

  Matrix d_u2 = d_feats.array() * up2_pre_.unaryExpr([](double v) { return gelu_grad(v); }).array();
  Matrix d_g1 = up2_.backward(d_u2);
  Matrix d_u1 = d_g1.array() * up1_pre_.unaryExpr([](double v) { return gelu_grad(v); }).array();
  Matrix d_img = up1_.backward(d_u1);

  Matrix d_mask_state = final_norm_.backward(hyper_.backward(d_hvec));
  Matrix d_tokens = Matrix::Zero(batch_ * 2, dim_);
  for (Eigen::Index b = 0; b < batch_; ++b) d_tokens.row(2 * b) = d_mask_state.row(b);

  for (auto it = layers_.rbegin(); it != layers_.rend(); ++it) {
    auto [dt, di] = it->backward(d_tokens, d_img);
    d_tokens = std::move(dt);
    d_img = std::move(di);
  }

  Matrix d_prompt(batch_, dim_);
  for (Eigen::Index b = 0; b < batch_; ++b) {
    mask_token_grad_ += d_tokens.row(2 * b).transpose();
    d_prompt.row(b) = d_tokens.row(2 * b + 1);
  }
  return {std::move(d_img), std::move(d_prompt)};
}

void MaskDecoder::collect(const std::string& prefix, ParamList& out) {
  out.push_back(make_ref<Vector>(prefix + ".mask_token", kGroupDecoder, mask_token_,
                                 &mask_token_grad_, &mask_token_trainable_));
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    layers_[i].collect(prefix + ".layer" + std::to_string(i), out);
  }
  final_norm_.collect(prefix + ".final_norm", out);
  hyper_.collect(prefix + ".hyper", out);
  up1_.collect(prefix + ".up1", out);
  up2_.collect(prefix + ".up2", out);
}

void MaskDecoder::set_trainable(bool t) {
  mask_token_trainable_ = t;
  for (DecoderLayer& l : layers_) l.set_trainable(t);
  up1_.set_trainable(t);
  up2_.set_trainable(t);
  static_cast<DenseLinear&>(hyper_.fc1()).set_trainable(t, t);
  static_cast<DenseLinear&>(hyper_.fc2()).set_trainable(t, t);
  // layernorm flags inside layers are reached through the group policy
}

// ---------------------------------------------------------------------------
// PromptSegModel
// ---------------------------------------------------------------------------

PromptSegModel::PromptSegModel(const ModelConfig& cfg, std::uint64_t seed)
    : cfg_([&] {
        cfg.validate();
        return cfg;
      }()),
      patch_embed_(cfg.image_size, cfg.patch, cfg.channels, cfg.dim),
      prompt_encoder_(cfg.dim, cfg.text_dim, kGroupPromptEncoder, kGroupPromptEncoder),
      tal_(cfg.text_dim),
      decoder_(cfg, seed),
      upsample_(cfg.patch / 4) {
  {
    auto rng = make_rng(seed, "patch_embed");
    patch_embed_.linear().init_normal(rng, kInitStd);
  }
  {
    auto rng = make_rng(seed, "pos_embed");
    std::normal_distribution<double> dist(0.0, kInitStd);
    pos_embed_.resize(static_cast<Eigen::Index>(cfg.grid()) * cfg.grid(), cfg.dim);
    for (Eigen::Index j = 0; j < pos_embed_.cols(); ++j) {
      for (Eigen::Index i = 0; i < pos_embed_.rows(); ++i) pos_embed_(i, j) = dist(rng);
    }
    pos_embed_grad_ = Matrix::Zero(pos_embed_.rows(), pos_embed_.cols());
  }
  blocks_.reserve(static_cast<std::size_t>(cfg.blocks));
  for (int i = 0; i < cfg.blocks; ++i) blocks_.emplace_back(cfg, i, seed);
  {
    auto rng = make_rng(seed, "prompt_encoder");
    prompt_encoder_.init_normal(rng, kInitStd);
  }
}

PromptSegModel build_pretrained(const ModelConfig& cfg, std::uint64_t seed) {
  return PromptSegModel(cfg, seed);
}

Matrix PromptSegModel::forward_batch(const std::vector<const Image*>& images,
                                     const Matrix& prompt_embeddings, bool train) {
  const Eigen::Index batch = static_cast<Eigen::Index>(images.size());
  if (prompt_embeddings.rows() != batch) {
    throw ShapeError("forward_batch: image/prompt count mismatch");
  }
  const int grid = cfg_.grid();
  const Eigen::Index tokens = static_cast<Eigen::Index>(grid) * grid;

  Matrix x = patch_embed_.forward(images, train);
  for (Eigen::Index b = 0; b < batch; ++b) x.middleRows(b * tokens, tokens) += pos_embed_;
  for (EncoderBlock& block : blocks_) x = block.forward(x, batch, tokens, train);

  Matrix prompt_tok = prompt_encoder_.forward(tal_.forward(prompt_embeddings, train), train);
  Matrix logits_low = decoder_.forward(x, prompt_tok, batch, grid, train);
  if (train) batch_ = batch;
  return upsample_.forward(logits_low, 4 * grid);
}

void PromptSegModel::backward_batch(const Matrix& d_logits) {
  const int grid = cfg_.grid();
  const Eigen::Index tokens = static_cast<Eigen::Index>(grid) * grid;
  Matrix d_low = upsample_.backward(d_logits);
  auto [d_img, d_prompt] = decoder_.backward(d_low);
  tal_.backward(prompt_encoder_.backward(d_prompt));
  for (auto it = blocks_.rbegin(); it != blocks_.rend(); ++it) d_img = it->backward(d_img);
  for (Eigen::Index b = 0; b < batch_; ++b) pos_embed_grad_ += d_img.middleRows(b * tokens, tokens);
  patch_embed_.backward(d_img);
}

Matrix PromptSegModel::encode_image(const Image& image) {
  const int grid = cfg_.grid();
  const Eigen::Index tokens = static_cast<Eigen::Index>(grid) * grid;
  std::vector<const Image*> imgs{&image};
  Matrix x = patch_embed_.forward(imgs, false);
  x += pos_embed_;
  for (EncoderBlock& block : blocks_) x = block.forward(x, 1, tokens, false);
  return x;
}

Matrix PromptSegModel::predict_logits(const Image& image, const Vector& prompt_embedding) {
  std::vector<const Image*> imgs{&image};
  Matrix logits = forward_batch(imgs, prompt_embedding.transpose(), false);
  return Eigen::Map<const Matrix>(logits.data(), image.w, image.h).transpose();
}

Mask PromptSegModel::predict_mask(const Image& image, const Vector& prompt_embedding) {
  Matrix logits = predict_logits(image, prompt_embedding);
  Mask m(image.h, image.w);
  for (int y = 0; y < image.h; ++y) {
    for (int x = 0; x < image.w; ++x) m.at(y, x) = logits(y, x) > 0.0 ? 1 : 0;
  }
  return m;
}

ParamList PromptSegModel::params() {
  ParamList out;
  patch_embed_.collect("patch_embed", out);
  out.push_back(
      make_ref<Matrix>("pos_embed", kGroupPosEmbed, pos_embed_, &pos_embed_grad_, &pos_embed_trainable_));
  for (std::size_t i = 0; i < blocks_.size(); ++i) {
    blocks_[i].collect("encoder.block" + std::to_string(i), out);
  }
  prompt_encoder_.collect("prompt_encoder", out);
  tal_.collect("tal", out);
  decoder_.collect("decoder", out);
  return out;
}

// ---------------------------------------------------------------------------
// Adaptation
// ---------------------------------------------------------------------------

Matrix average_pool_grid(const Matrix& grid, int g_src, int g_tgt) {
  if (grid.rows() != static_cast<Eigen::Index>(g_src) * g_src) {
    throw ShapeError("average_pool_grid: grid rows do not match g_src");
  }
  if (g_tgt < 1 || g_tgt > g_src) {
    throw ConfigError("average_pool_grid: target grid must satisfy 1 <= g_tgt <= g_src");
  }
  if (g_src % g_tgt != 0) {
    throw ConfigError("average_pool_grid: source grid " + std::to_string(g_src) +
                      " is not an integer multiple of target grid " + std::to_string(g_tgt));
  }
  const int k = g_src / g_tgt;
  Matrix out = Matrix::Zero(static_cast<Eigen::Index>(g_tgt) * g_tgt, grid.cols());
  for (int oy = 0; oy < g_tgt; ++oy) {
    for (int ox = 0; ox < g_tgt; ++ox) {
      for (int dy = 0; dy < k; ++dy) {
        for (int dx = 0; dx < k; ++dx) {
          out.row(oy * g_tgt + ox) += grid.row((oy * k + dy) * g_src + (ox * k + dx));
        }
      }
      out.row(oy * g_tgt + ox) /= static_cast<double>(k * k);
    }
  }
  return out;
}

namespace {
// Replace a dense slot with an identity-initialized SVD adapter.
void wrap_svd(std::unique_ptr<LinearMap>& slot, const std::string& id) {
  auto* lin = dynamic_cast<DenseLinear*>(slot.get());
  if (!lin) throw ConfigError("adapt_for_ssam: layer " + id + " is not densely wired");
  std::optional<Vector> bias = lin->bias();
  slot = std::make_unique<SvdLinear>(decompose(lin->weight(), bias, id));
}

void wrap_lora(std::unique_ptr<LinearMap>& slot, const std::string& id, int rank,
               std::uint64_t seed) {
  auto* lin = dynamic_cast<DenseLinear*>(slot.get());
  if (!lin) throw ConfigError("rewire_lora: layer " + id + " is not densely wired");
  std::optional<Vector> bias = lin->bias();
  slot = std::make_unique<LoraLinear>(
      make_lora(lin->weight(), bias, rank, splitmix64(seed ^ fnv1a64(id))));
}
}  // namespace

void adapt_for_ssam(PromptSegModel& model, int target_image_size) {
  if (model.wiring_ != Wiring::kDense) {
    throw ConfigError("adapt_for_ssam: model is already adapted");
  }
  if (target_image_size < 1 || target_image_size % model.cfg_.patch != 0) {
    throw ConfigError("adapt_for_ssam: target image size must be a positive multiple of patch");
  }
  const int g_src = model.cfg_.grid();
  const int g_tgt = target_image_size / model.cfg_.patch;
  // average_pool_grid validates the pooling ratio
  Matrix pooled = average_pool_grid(model.pos_embed_, g_src, g_tgt);
  model.pos_embed_ = std::move(pooled);
  model.pos_embed_grad_ = Matrix::Zero(model.pos_embed_.rows(), model.pos_embed_.cols());
  model.cfg_.image_size = target_image_size;
  model.patch_embed_.set_image_size(target_image_size);

  for (std::size_t i = 0; i < model.blocks_.size(); ++i) {
    EncoderBlock& blk = model.blocks_[i];
    const std::string base = "encoder.block" + std::to_string(i);
    wrap_svd(blk.attn().qkv_slot(), base + ".attn.qkv");
    if (model.cfg_.adapt_out_proj) wrap_svd(blk.attn().proj_slot(), base + ".attn.proj");
    wrap_svd(blk.mlp().fc1_slot(), base + ".mlp.fc1");
    wrap_svd(blk.mlp().fc2_slot(), base + ".mlp.fc2");
  }
  model.wiring_ = Wiring::kSvd;

  set_all_trainable(model, false);
  set_group_trainable(model, kGroupAdapterScale, true);
  set_group_trainable(model, kGroupAdapterShift, true);
  set_group_trainable(model, kGroupLayerNorm, true);
  set_group_trainable(model, kGroupPosEmbed, true);
  set_group_trainable(model, kGroupTal, true);
}

void rewire_lora(PromptSegModel& model, int rank, std::uint64_t seed) {
  if (model.wiring_ != Wiring::kDense) {
    throw ConfigError("rewire_lora: model is already adapted");
  }
  for (std::size_t i = 0; i < model.blocks_.size(); ++i) {
    EncoderBlock& blk = model.blocks_[i];
    const std::string base = "encoder.block" + std::to_string(i);
    wrap_lora(blk.attn().qkv_slot(), base + ".attn.qkv", rank, seed);
    if (model.cfg_.adapt_out_proj) wrap_lora(blk.attn().proj_slot(), base + ".attn.proj", rank, seed);
    wrap_lora(blk.mlp().fc1_slot(), base + ".mlp.fc1", rank, seed);
    wrap_lora(blk.mlp().fc2_slot(), base + ".mlp.fc2", rank, seed);
  }
  model.wiring_ = Wiring::kLora;
  model.lora_rank_ = rank;

  set_all_trainable(model, false);
  set_group_trainable(model, kGroupLora, true);
}

void set_all_trainable(PromptSegModel& model, bool trainable) {
  for (const ParamRef& p : model.params()) {
    if (p.group == kGroupAdapterFrozen) continue;  // factor matrices never train
    if (p.trainable) *p.trainable = trainable;
  }
}

void set_group_trainable(PromptSegModel& model, const std::string& group, bool trainable) {
  if (group == kGroupAdapterFrozen) return;
  for (const ParamRef& p : model.params()) {
    if (p.group == group && p.trainable) *p.trainable = trainable;
  }
}

}  // namespace svdseg
