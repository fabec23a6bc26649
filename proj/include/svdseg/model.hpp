// Copyright (c) 2026 the svdseg authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <memory>
#include <string>
#include <vector>

#include "svdseg/layers.hpp"
#include "svdseg/text_prompt.hpp"

namespace svdseg {

struct ModelConfig {
  int image_size = 128;
  int patch = 16;
  int channels = 3;
  int dim = 128;
  int heads = 4;
  int blocks = 4;
  int mlp_hidden = 512;
  int text_dim = 64;
  int dec_layers = 2;
  int dec_mlp = 2048;
  int up_mid = 64;  // first deconv output channels
  int up_out = 32;  // mask feature dim
  bool adapt_out_proj = true;  // also adapt the attention output projection

  int grid() const { return image_size / patch; }
  void validate() const;
};

// How the encoder's linear maps are currently wired.
enum class Wiring { kDense, kSvd, kLora };

std::string wiring_name(Wiring w);
Wiring wiring_from_name(const std::string& name);

class EncoderBlock {
 public:
  EncoderBlock(const ModelConfig& cfg, int index, std::uint64_t seed);

  Matrix forward(const Matrix& x, Eigen::Index batch, Eigen::Index tokens, bool train);
  Matrix backward(const Matrix& dy);
  void collect(const std::string& prefix, ParamList& out);

  EncoderAttention& attn() { return attn_; }
  MlpBlock& mlp() { return mlp_; }
  LayerNorm& norm1() { return n1_; }
  LayerNorm& norm2() { return n2_; }

 private:
  LayerNorm n1_, n2_;
  EncoderAttention attn_;
  MlpBlock mlp_;
};

// One two-way fusion layer: tokens self-attend, read from the image, run
// through an MLP, then the image reads back from the tokens.
class DecoderLayer {
 public:
  DecoderLayer(const ModelConfig& cfg, int index, std::uint64_t seed);

  // tokens: (B*2) x dim, img: (B*T) x dim. Returns updated (tokens, img).
  std::pair<Matrix, Matrix> forward(const Matrix& tokens, const Matrix& img, Eigen::Index batch,
                                    Eigen::Index img_tokens, bool train);
  std::pair<Matrix, Matrix> backward(const Matrix& d_tokens, const Matrix& d_img);
  void collect(const std::string& prefix, ParamList& out);
  void set_trainable(bool t);

 private:
  LayerNorm nt1_, nt2_, nt3_, ni1_;
  CrossAttention self_attn_, token_to_image_, image_to_token_;
  MlpBlock mlp_;
};

// Frozen two-way cross-attention decoder with a single mask token. The mask
// token state is mapped through a small MLP to a feature-space vector that is
// dotted against a deconv-upscaled image embedding to produce mask logits at
// 4x the encoder grid.
class MaskDecoder {
 public:
  MaskDecoder(const ModelConfig& cfg, std::uint64_t seed);

  // img: (B*G^2) x dim, prompt: B x dim. Returns logits B x (4G)^2.
  Matrix forward(const Matrix& img, const Matrix& prompt, Eigen::Index batch, int grid, bool train);
  // Returns (d_img, d_prompt).
  std::pair<Matrix, Matrix> backward(const Matrix& d_logits);
  void collect(const std::string& prefix, ParamList& out);
  void set_trainable(bool t);

 private:
  Eigen::Index dim_;
  Vector mask_token_;
  Vector mask_token_grad_;
  bool mask_token_trainable_ = false;
  std::vector<DecoderLayer> layers_;
  LayerNorm final_norm_;
  MlpBlock hyper_;
  Deconv2x2 up1_, up2_;
  // caches
  Eigen::Index batch_ = 0;
  int grid_ = 0;
  Matrix feats_cache_;  // (B*(4G)^2) x up_out, post-gelu
  Matrix hvec_cache_;   // B x up_out
  Matrix up1_pre_, up2_pre_;
};

// Desk-scale promptable segmentation model: patch embedding, learnable
// positional grid, transformer encoder, frozen prompt encoder and mask
// decoder, and a text affine layer in front of the prompt encoder.
class PromptSegModel {
 public:
  PromptSegModel(const ModelConfig& cfg, std::uint64_t seed);

  // --- evaluation entry points (side-effect free) ---
  // Image embedding grid, G^2 x dim.
  Matrix encode_image(const Image& image);
  // Mask logits for one (image, prompt embedding) pair, H x W.
  Matrix predict_logits(const Image& image, const Vector& prompt_embedding);
  // predict_logits binarized at probability 0.5 (logit 0).
  Mask predict_mask(const Image& image, const Vector& prompt_embedding);

  // --- batched training path ---
  // logits: B x (H*W). prompt_embeddings: B x text_dim.
  Matrix forward_batch(const std::vector<const Image*>& images, const Matrix& prompt_embeddings,
                       bool train);
  void backward_batch(const Matrix& d_logits);

  ParamList params();

  const ModelConfig& config() const { return cfg_; }
  Wiring wiring() const { return wiring_; }
  int lora_rank() const { return lora_rank_; }

  PatchEmbed& patch_embed() { return patch_embed_; }
  Matrix& pos_embed() { return pos_embed_; }
  std::vector<EncoderBlock>& blocks() { return blocks_; }
  DenseLinear& prompt_encoder() { return prompt_encoder_; }
  TextAffineLayer& tal() { return tal_; }
  MaskDecoder& decoder() { return decoder_; }

 private:
  friend void adapt_for_ssam(PromptSegModel&, int);
  friend void rewire_lora(PromptSegModel&, int, std::uint64_t);

  ModelConfig cfg_;
  Wiring wiring_ = Wiring::kDense;
  int lora_rank_ = 0;

  PatchEmbed patch_embed_;
  Matrix pos_embed_;  // G^2 x dim
  Matrix pos_embed_grad_;
  bool pos_embed_trainable_ = false;
  std::vector<EncoderBlock> blocks_;
  DenseLinear prompt_encoder_;
  TextAffineLayer tal_;
  MaskDecoder decoder_;
  BilinearUpsample upsample_;
  Eigen::Index batch_ = 0;
};

// Randomly initialized model, deterministic per (config, seed). Actual
// pretraining happens in the training driver.
PromptSegModel build_pretrained(const ModelConfig& cfg, std::uint64_t seed);

// Non-overlapping block-average pooling of a (G_src^2 x dim) grid down to
// (G_tgt^2 x dim). G_src must be an integer multiple of G_tgt.
Matrix average_pool_grid(const Matrix& grid, int g_src, int g_tgt);

// Rewires every encoder block matrix through an identity-initialized SVD
// adapter, pools the positional grid to the target image size, and marks the
// standard trainable set (adapter scale/shift, encoder layernorms, pos_embed,
// TAL). Everything else is frozen. The model must still be densely wired.
void adapt_for_ssam(PromptSegModel& model, int target_image_size);

// Same matrix set as adapt_for_ssam, wrapped in LoRA adapters instead.
void rewire_lora(PromptSegModel& model, int rank, std::uint64_t seed);

// Trainability policy helpers. Frozen SVD/LoRA factor groups are never
// touched.
void set_all_trainable(PromptSegModel& model, bool trainable);
void set_group_trainable(PromptSegModel& model, const std::string& group, bool trainable);

}  // namespace svdseg
