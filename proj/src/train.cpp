// Copyright (c) 2026 the svdseg authors
// SPDX-License-Identifier: Apache-2.0

#include "svdseg/train.hpp"

#include <cmath>
#include <fstream>
#include <sstream>

#include "svdseg/report.hpp"

namespace svdseg {

namespace fs = std::filesystem;

// ---------------------------------------------------------------------------
// Config parsing
// ---------------------------------------------------------------------------

namespace {

bool parse_bool(const std::string& v, const std::string& key) {
  if (v == "true" || v == "1" || v == "on" || v == "yes") return true;
  if (v == "false" || v == "0" || v == "off" || v == "no") return false;
  throw ConfigError("config: bad boolean for " + key + ": " + v);
}

std::vector<std::uint64_t> parse_seed_list(const std::string& v) {
  std::vector<std::uint64_t> out;
  std::stringstream ss(v);
  std::string tok;
  while (std::getline(ss, tok, ',')) {
    if (!tok.empty()) out.push_back(std::stoull(tok));
  }
  if (out.empty()) throw ConfigError("config: empty seed list");
  return out;
}

void apply_key(RunConfig& cfg, const std::string& key, const std::string& value) {
  auto to_i = [&] { return std::stoi(value); };
  auto to_d = [&] { return std::stod(value); };

  if (key == "image_size") cfg.model.image_size = to_i();
  else if (key == "patch") cfg.model.patch = to_i();
  else if (key == "channels") cfg.model.channels = to_i();
  else if (key == "dim") cfg.model.dim = to_i();
  else if (key == "heads") cfg.model.heads = to_i();
  else if (key == "blocks") cfg.model.blocks = to_i();
  else if (key == "mlp_hidden") cfg.model.mlp_hidden = to_i();
  else if (key == "text_dim") cfg.model.text_dim = to_i();
  else if (key == "dec_layers") cfg.model.dec_layers = to_i();
  else if (key == "dec_mlp") cfg.model.dec_mlp = to_i();
  else if (key == "up_mid") cfg.model.up_mid = to_i();
  else if (key == "up_out") cfg.model.up_out = to_i();
  else if (key == "adapt_out_proj") cfg.model.adapt_out_proj = parse_bool(value, key);
  else if (key == "method") cfg.method = method_from_name(value);
  else if (key == "lora_rank") cfg.lora_rank = to_i();
  else if (key == "toggle_pos_embed") cfg.toggles.pos_embed = parse_bool(value, key);
  else if (key == "toggle_layernorm") cfg.toggles.layernorm = parse_bool(value, key);
  else if (key == "toggle_tal") cfg.toggles.tal = parse_bool(value, key);
  else if (key == "toggle_scale") cfg.toggles.scale = parse_bool(value, key);
  else if (key == "toggle_shift") cfg.toggles.shift = parse_bool(value, key);
  else if (key == "lr") cfg.lr = to_d();
  else if (key == "pretrain_lr") cfg.pretrain_lr = to_d();
  else if (key == "steps") cfg.steps = to_i();
  else if (key == "pretrain_steps") cfg.pretrain_steps = to_i();
  else if (key == "batch") cfg.batch = to_i();
  else if (key == "warmup") cfg.warmup = to_i();
  else if (key == "clip_norm") cfg.clip_norm = to_d();
  else if (key == "train_images") cfg.train_images = to_i();
  else if (key == "eval_images") cfg.eval_images = to_i();
  else if (key == "data_seed") cfg.data_seed = std::stoull(value);
  else if (key == "target_invert") cfg.target_shift.invert = parse_bool(value, key);
  else if (key == "target_noise") cfg.target_shift.noise_amp = to_d();
  else if (key == "target_grad") cfg.target_shift.grad_amp = to_d();
  else if (key == "target_deform") cfg.target_shift.deform = to_d();
  else if (key == "data_dir") cfg.data_dir = value;
  else if (key == "seed") cfg.seed = std::stoull(value);
  else if (key == "seeds") cfg.seeds = parse_seed_list(value);
  else if (key == "out") cfg.out_dir = value;
  else if (key == "run_name") cfg.run_name = value;
  else if (key == "pretrained") cfg.pretrained = value;
  else throw ConfigError("config: unknown key: " + key);
}

std::string trim(const std::string& s) {
  const auto a = s.find_first_not_of(" \t\r\n");
  if (a == std::string::npos) return "";
  const auto b = s.find_last_not_of(" \t\r\n");
  return s.substr(a, b - a + 1);
}

}  // namespace

RunConfig parse_run_config(const std::optional<fs::path>& file,
                           const std::vector<std::pair<std::string, std::string>>& overrides) {
  RunConfig cfg;
  if (const char* env = std::getenv("SVDSEG_OUT"); env && *env) cfg.out_dir = env;

  if (file) {
    std::ifstream in(*file);
    if (!in) throw ConfigError("cannot open config file: " + file->string());
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
      ++lineno;
      const auto hash = line.find('#');
      if (hash != std::string::npos) line.resize(hash);
      line = trim(line);
      if (line.empty()) continue;
      const auto eq = line.find('=');
      if (eq == std::string::npos) {
        throw ConfigError("config: expected key = value at " + file->string() + ":" +
                          std::to_string(lineno));
      }
      const std::string key = trim(line.substr(0, eq));
      const std::string value = trim(line.substr(eq + 1));
      apply_key(cfg, key, value);
      cfg.provided.insert(key);
    }
  }
  for (const auto& [key, value] : overrides) {
    apply_key(cfg, key, value);
    cfg.provided.insert(key);
  }
  cfg.model.validate();
  if (cfg.batch < 1 || cfg.steps < 0 || cfg.pretrain_steps < 0) {
    throw ConfigError("config: batch must be >= 1 and step counts >= 0");
  }
  return cfg;
}

void write_resolved_config(const RunConfig& cfg, const fs::path& file) {
  std::ofstream out(file);
  if (!out) throw DataError("cannot write resolved config: " + file.string());
  out << "# resolved run configuration\n";
  out << "image_size = " << cfg.model.image_size << "\n";
  out << "patch = " << cfg.model.patch << "\n";
  out << "channels = " << cfg.model.channels << "\n";
  out << "dim = " << cfg.model.dim << "\n";
  out << "heads = " << cfg.model.heads << "\n";
  out << "blocks = " << cfg.model.blocks << "\n";
  out << "mlp_hidden = " << cfg.model.mlp_hidden << "\n";
  out << "text_dim = " << cfg.model.text_dim << "\n";
  out << "dec_layers = " << cfg.model.dec_layers << "\n";
  out << "dec_mlp = " << cfg.model.dec_mlp << "\n";
  out << "up_mid = " << cfg.model.up_mid << "\n";
  out << "up_out = " << cfg.model.up_out << "\n";
  out << "adapt_out_proj = " << (cfg.model.adapt_out_proj ? "true" : "false") << "\n";
  out << "method = " << method_name(cfg.method) << "\n";
  out << "lora_rank = " << cfg.lora_rank << "\n";
  out << "toggle_pos_embed = " << (cfg.toggles.pos_embed ? "true" : "false") << "\n";
  out << "toggle_layernorm = " << (cfg.toggles.layernorm ? "true" : "false") << "\n";
  out << "toggle_tal = " << (cfg.toggles.tal ? "true" : "false") << "\n";
  out << "toggle_scale = " << (cfg.toggles.scale ? "true" : "false") << "\n";
  out << "toggle_shift = " << (cfg.toggles.shift ? "true" : "false") << "\n";
  out << "lr = " << cfg.lr << "\n";
  out << "pretrain_lr = " << cfg.pretrain_lr << "\n";
  out << "steps = " << cfg.steps << "\n";
  out << "pretrain_steps = " << cfg.pretrain_steps << "\n";
  out << "batch = " << cfg.batch << "\n";
  out << "warmup = " << cfg.warmup << "\n";
  out << "clip_norm = " << cfg.clip_norm << "\n";
  out << "train_images = " << cfg.train_images << "\n";
  out << "eval_images = " << cfg.eval_images << "\n";
  out << "data_seed = " << cfg.data_seed << "\n";
  out << "target_invert = " << (cfg.target_shift.invert ? "true" : "false") << "\n";
  out << "target_noise = " << cfg.target_shift.noise_amp << "\n";
  out << "target_grad = " << cfg.target_shift.grad_amp << "\n";
  out << "target_deform = " << cfg.target_shift.deform << "\n";
  if (!cfg.data_dir.empty()) out << "data_dir = " << cfg.data_dir << "\n";
  out << "seed = " << cfg.seed << "\n";
  out << "seeds = ";
  for (std::size_t i = 0; i < cfg.seeds.size(); ++i) {
    out << cfg.seeds[i] << (i + 1 < cfg.seeds.size() ? "," : "");
  }
  out << "\n";
  out << "out = " << cfg.out_dir << "\n";
  if (!cfg.run_name.empty()) out << "run_name = " << cfg.run_name << "\n";
  if (!cfg.pretrained.empty()) out << "pretrained = " << cfg.pretrained << "\n";
}

void check_config_for_command(const RunConfig& cfg, const std::string& command) {
  static const char* toggle_keys[] = {"toggle_pos_embed", "toggle_layernorm", "toggle_tal",
                                      "toggle_scale", "toggle_shift"};
  if (cfg.method != Method::kSvd) {
    for (const char* key : toggle_keys) {
      if (cfg.provided.count(key)) {
        throw ConfigError(std::string("config: ") + key + " is only valid for method=svd");
      }
    }
  }
  if ((command == "adapt" || command == "ablation") && cfg.pretrained.empty()) {
    throw ConfigError("config: " + command + " requires a pretrained checkpoint (pretrained=...)");
  }
  if (command == "adapt" && cfg.method == Method::kLora && cfg.lora_rank < 1) {
    throw ConfigError("config: lora_rank must be >= 1");
  }
}

// ---------------------------------------------------------------------------
// Optimizer, schedule, loss
// ---------------------------------------------------------------------------

void AdamOptimizer::step(const ParamList& params, double lr) {
  ++t_;
  const double bc1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
  const double bc2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
  for (const ParamRef& p : params) {
    if (!p.trainable || !*p.trainable || !p.grad) continue;
    Slot& slot = slots_[p.name];
    const std::size_t n = static_cast<std::size_t>(p.size());
    if (slot.m.size() != n) {
      slot.m.assign(n, 0.0);
      slot.v.assign(n, 0.0);
    }
    for (std::size_t i = 0; i < n; ++i) {
      const double g = p.grad[i];
      slot.m[i] = beta1_ * slot.m[i] + (1.0 - beta1_) * g;
      slot.v[i] = beta2_ * slot.v[i] + (1.0 - beta2_) * g * g;
      const double mhat = slot.m[i] / bc1;
      const double vhat = slot.v[i] / bc2;
      p.value[i] -= lr * mhat / (std::sqrt(vhat) + eps_);
    }
  }
}

double lr_at_step(double base_lr, int step, int total_steps, int warmup) {
  if (warmup > 0 && step < warmup) {
    return base_lr * static_cast<double>(step + 1) / static_cast<double>(warmup);
  }
  const int decay_steps = std::max(1, total_steps - warmup);
  const double t = static_cast<double>(step - warmup) / static_cast<double>(decay_steps);
  return base_lr * 0.5 * (1.0 + std::cos(M_PI * std::min(1.0, std::max(0.0, t))));
}

BatchLoss seg_loss(const Matrix& logits, const std::vector<const Mask*>& masks) {
  const Eigen::Index batch = logits.rows();
  const Eigen::Index pix = logits.cols();
  if (static_cast<std::size_t>(batch) != masks.size()) {
    throw ShapeError("seg_loss: batch size mismatch");
  }
  constexpr double kDiceEps = 1.0;  // also gives blank-blank pairs a clean 0 loss
  BatchLoss out;
  out.d_logits = Matrix::Zero(batch, pix);
  double total = 0.0;
  const double inv_b = 1.0 / static_cast<double>(batch);
  const double inv_pix = 1.0 / static_cast<double>(pix);
  for (Eigen::Index b = 0; b < batch; ++b) {
    const Mask& m = *masks[static_cast<std::size_t>(b)];
    if (static_cast<Eigen::Index>(m.v.size()) != pix) {
      throw ShapeError("seg_loss: mask does not match logit resolution");
    }
    double bce = 0.0, sp = 0.0, sg = 0.0, si = 0.0;
    Eigen::ArrayXd prob(pix);
    for (Eigen::Index i = 0; i < pix; ++i) {
      const double l = logits(b, i);
      const double y = m.v[static_cast<std::size_t>(i)] ? 1.0 : 0.0;
      bce += std::max(l, 0.0) - l * y + std::log1p(std::exp(-std::abs(l)));
      const double p = 1.0 / (1.0 + std::exp(-l));
      prob[i] = p;
      sp += p;
      sg += y;
      si += p * y;
    }
    bce *= inv_pix;
    const double denom = sp + sg + kDiceEps;
    const double dice_loss = 1.0 - (2.0 * si + kDiceEps) / denom;
    total += (bce + dice_loss) * inv_b;
    for (Eigen::Index i = 0; i < pix; ++i) {
      const double y = m.v[static_cast<std::size_t>(i)] ? 1.0 : 0.0;
      const double p = prob[i];
      const double d_bce = (p - y) * inv_pix;
      const double d_dice_dp = -(2.0 * y * denom - (2.0 * si + kDiceEps)) / (denom * denom);
      out.d_logits(b, i) = (d_bce + d_dice_dp * p * (1.0 - p)) * inv_b;
    }
  }
  out.value = total;
  return out;
}

// ---------------------------------------------------------------------------
// Trainer
// ---------------------------------------------------------------------------

TrainStats train_model(PromptSegModel& model, const TextEmbedder& embedder, const Dataset& data,
                       int steps, int batch, double base_lr, int warmup, double clip_norm,
                       std::uint64_t seed) {
  TrainStats stats;
  stats.steps = steps;
  if (steps == 0) return stats;
  if (data.samples.empty()) throw TrainError("train: empty dataset");

  ParamList params = model.params();
  if (trainable_count(params) == 0) return stats;  // nothing to train: no-op

  std::vector<std::size_t> present, absent;
  for (std::size_t i = 0; i < data.samples.size(); ++i) {
    (data.samples[i].mask.blank() ? absent : present).push_back(i);
  }
  if (present.empty()) throw TrainError("train: dataset has no present-class samples");

  // Per-label embedding cache.
  std::map<std::string, Vector> emb;
  for (const std::string& name : data.labels.names()) emb[name] = embedder.embed(name);

  AdamOptimizer opt;
  std::mt19937_64 rng = make_rng(seed, "train/batches");
  std::uniform_real_distribution<double> unit(0.0, 1.0);

  for (int step = 0; step < steps; ++step) {
    std::vector<const Image*> images(static_cast<std::size_t>(batch));
    std::vector<const Mask*> masks(static_cast<std::size_t>(batch));
    Matrix prompts(batch, embedder.dim());
    for (int b = 0; b < batch; ++b) {
      // 3:1 present to absent-class prompts
      const bool pick_absent = !absent.empty() && unit(rng) < 0.25;
      const std::vector<std::size_t>& pool = pick_absent ? absent : present;
      const std::size_t idx = pool[static_cast<std::size_t>(unit(rng) * pool.size()) % pool.size()];
      const SegSample& s = data.samples[idx];
      images[static_cast<std::size_t>(b)] = &s.image;
      masks[static_cast<std::size_t>(b)] = &s.mask;
      prompts.row(b) = emb.at(s.prompt).transpose();
    }

    Matrix logits = model.forward_batch(images, prompts, true);
    BatchLoss loss = seg_loss(logits, masks);
    if (!std::isfinite(loss.value)) {
      throw TrainError("training diverged (non-finite loss) at step " + std::to_string(step));
    }
    zero_grads(params);
    model.backward_batch(loss.d_logits);

    if (clip_norm > 0) {
      double sq = 0.0;
      for (const ParamRef& p : params) {
        if (!p.trainable || !*p.trainable || !p.grad) continue;
        sq += Eigen::Map<const Vector>(p.grad, p.size()).squaredNorm();
      }
      const double norm = std::sqrt(sq);
      if (norm > clip_norm) {
        const double scale = clip_norm / norm;
        for (const ParamRef& p : params) {
          if (!p.trainable || !*p.trainable || !p.grad) continue;
          Eigen::Map<Vector>(p.grad, p.size()) *= scale;
        }
      }
    }

    opt.step(params, lr_at_step(base_lr, step, steps, warmup));
    stats.final_loss = loss.value;
  }
  return stats;
}

// ---------------------------------------------------------------------------
// Run drivers
// ---------------------------------------------------------------------------

fs::path run_dir(const RunConfig& cfg, const std::string& default_name) {
  const std::string name = cfg.run_name.empty() ? default_name : cfg.run_name;
  fs::path dir = fs::path(cfg.out_dir) / name;
  fs::create_directories(dir);
  return dir;
}

Dataset make_dataset(const RunConfig& cfg, Domain domain, bool eval_split) {
  if (!cfg.data_dir.empty()) {
    return ingest(cfg.data_dir);
  }
  GenSpec spec = domain == Domain::kSource ? GenSpec::source_default() : GenSpec::target_default();
  if (domain == Domain::kTarget) spec.shift = cfg.target_shift;
  spec.image_size = cfg.model.image_size;
  spec.channels = cfg.model.channels;
  const std::string stream =
      std::string("data/") + domain_name(domain) + "/" + (eval_split ? "eval" : "train");
  const int n = eval_split ? cfg.eval_images : cfg.train_images;
  return generate(spec, n, splitmix64(cfg.data_seed ^ fnv1a64(stream)));
}

PretrainOutcome run_pretrain(const RunConfig& cfg) {
  const fs::path dir = run_dir(cfg, "pretrain-s" + std::to_string(cfg.seed));
  write_resolved_config(cfg, dir / "config.resolved.cfg");

  Dataset train_data = make_dataset(cfg, Domain::kSource, false);
  Dataset eval_data = make_dataset(cfg, Domain::kSource, true);
  TextEmbedder embedder(cfg.model.text_dim, train_data.labels.names());

  PromptSegModel model = build_pretrained(cfg.model, cfg.seed);
  // Pretraining trains the base model; the TAL is adaptation machinery and
  // stays at identity.
  set_all_trainable(model, true);
  set_group_trainable(model, kGroupTal, false);

  TrainStats stats = train_model(model, embedder, train_data, cfg.pretrain_steps, cfg.batch,
                                 cfg.pretrain_lr, cfg.warmup, cfg.clip_norm, cfg.seed);

  set_all_trainable(model, false);  // checkpoints store the frozen base
  PretrainOutcome out;
  out.final_loss = stats.final_loss;
  out.checkpoint = dir / "checkpoint.ckpt";
  save_checkpoint(snapshot_model(model), out.checkpoint);
  out.source_eval = evaluate(model, embedder, eval_data);
  write_json(dice_result_to_json(out.source_eval), dir / "eval.json");
  return out;
}

AdaptOutcome run_adapt(const RunConfig& cfg) {
  if (cfg.pretrained.empty()) throw ConfigError("adapt: missing pretrained checkpoint path");
  const fs::path dir =
      run_dir(cfg, "adapt-" + method_name(cfg.method) + "-s" + std::to_string(cfg.seed));
  write_resolved_config(cfg, dir / "config.resolved.cfg");

  const Checkpoint pretrained = load_checkpoint(cfg.pretrained);
  PromptSegModel model = restore_model(pretrained);
  const std::size_t dense_total = total_count(model.params());

  make_baseline(model, cfg.method, cfg.lora_rank, cfg.seed);
  if (cfg.method == Method::kSvd) apply_ssam_toggles(model, cfg.toggles);

  // Post-wiring snapshot: reference for auditing arrays (e.g. SVD factors)
  // that do not exist in the dense pretrained checkpoint.
  const Checkpoint wired = snapshot_model(model);

  Dataset train_data = make_dataset(cfg, Domain::kTarget, false);
  Dataset eval_data = make_dataset(cfg, Domain::kTarget, true);
  TextEmbedder embedder(cfg.model.text_dim, train_data.labels.names());

  train_model(model, embedder, train_data, cfg.steps, cfg.batch, cfg.lr, cfg.warmup, cfg.clip_norm,
              cfg.seed);

  AdaptOutcome out;
  const Checkpoint adapted = snapshot_model(model);
  out.checkpoint = dir / "checkpoint.ckpt";
  save_checkpoint(adapted, out.checkpoint);

  out.audit_violations = audit_frozen_bitwise(pretrained, adapted);
  for (const std::string& name : audit_frozen_bitwise(wired, adapted)) {
    out.audit_violations.push_back(name);
  }

  out.params = report_params(model, method_name(cfg.method), dense_total);
  out.params.total_formula = total_params_formula(cfg.model);
  out.params.trainable_formula = trainable_params_formula(cfg.method, cfg.model, cfg.lora_rank);
  write_json(out.params.to_json(), dir / "param_report.json");

  out.target_eval = evaluate(model, embedder, eval_data);
  write_json(dice_result_to_json(out.target_eval), dir / "eval.json");
  return out;
}

std::vector<std::pair<std::string, SsamToggles>> ablation_rows() {
  // Cumulative component rows: none; +pos; +layernorm; +TAL; +scale;
  // +shift (without scale); both.
  std::vector<std::pair<std::string, SsamToggles>> rows;
  rows.push_back({"none", SsamToggles{false, false, false, false, false}});
  rows.push_back({"pos", SsamToggles{true, false, false, false, false}});
  rows.push_back({"pos+ln", SsamToggles{true, true, false, false, false}});
  rows.push_back({"pos+ln+tal", SsamToggles{true, true, true, false, false}});
  rows.push_back({"pos+ln+tal+scale", SsamToggles{true, true, true, true, false}});
  rows.push_back({"pos+ln+tal+shift", SsamToggles{true, true, true, false, true}});
  rows.push_back({"pos+ln+tal+scale+shift", SsamToggles{true, true, true, true, true}});
  return rows;
}

std::vector<AblationRow> run_ablation(const RunConfig& cfg) {
  if (cfg.pretrained.empty()) throw ConfigError("ablation: missing pretrained checkpoint path");
  const fs::path dir = run_dir(cfg, "ablation");
  write_resolved_config(cfg, dir / "config.resolved.cfg");

  std::vector<AblationRow> table;
  for (const auto& [name, toggles] : ablation_rows()) {
    AblationRow row;
    row.name = name;
    row.toggles = toggles;
    for (std::uint64_t seed : cfg.seeds) {
      RunConfig sub = cfg;
      sub.method = Method::kSvd;
      sub.toggles = toggles;
      sub.seed = seed;
      sub.run_name = "ablation/" + name + "-s" + std::to_string(seed);
      AdaptOutcome outcome = run_adapt(sub);
      if (!outcome.audit_violations.empty()) {
        throw TrainError("ablation: frozen-bitwise audit failed for row " + name);
      }
      row.per_seed_dsc.push_back(outcome.target_eval.average);
    }
    double sum = 0;
    for (double d : row.per_seed_dsc) sum += d;
    row.mean_dsc = sum / static_cast<double>(row.per_seed_dsc.size());
    table.push_back(std::move(row));
  }

  write_json(ablation_to_json(table), dir / "ablation.json");
  return table;
}

DiceResult evaluate_checkpoint(const RunConfig& cfg, const fs::path& ckpt, Domain domain) {
  PromptSegModel model = restore_model(load_checkpoint(ckpt));
  Dataset eval_data = make_dataset(cfg, domain, true);
  TextEmbedder embedder(model.config().text_dim, eval_data.labels.names());
  return evaluate(model, embedder, eval_data);
}

}  // namespace svdseg
