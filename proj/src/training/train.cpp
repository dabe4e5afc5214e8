#include "kbsr/training/train.hpp"

#include <cinttypes>
#include <cstdio>
#include <fstream>
#include <set>
#include <sstream>

#include "json.hpp"

namespace kbsr {

using nlohmann::json;

// ---------------------------------------------------------------------------
// Config serialization
// ---------------------------------------------------------------------------

namespace {

json net_to_json(const NetworkConfig& n) {
  return json{{"variant", to_string(n.variant)},
              {"stages", n.stages},
              {"scale", n.scale},
              {"base_channels", n.base_channels},
              {"kernel_size", n.kernel_size},
              {"code_dim", n.code_dim},
              {"channels", n.channels},
              {"slope", n.slope},
              {"down_mode", to_string(n.down_mode)},
              {"enhance", n.enhance}};
}

NetworkConfig net_from_json(const json& j) {
  NetworkConfig n;
  n.variant = parse_variant(j.at("variant").get<std::string>());
  n.stages = j.at("stages").get<int>();
  n.scale = j.at("scale").get<int>();
  n.base_channels = j.at("base_channels").get<int>();
  n.kernel_size = j.at("kernel_size").get<int>();
  n.code_dim = j.at("code_dim").get<int>();
  n.channels = j.at("channels").get<int>();
  n.slope = j.at("slope").get<double>();
  n.down_mode = parse_down_mode(j.at("down_mode").get<std::string>());
  n.enhance = j.at("enhance").get<bool>();
  return n;
}

std::string read_text_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot read " + path.string());
  std::ostringstream out;
  out << in.rdbuf();
  return out.str();
}

void write_text_file(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << text;
}

/// Shortest round-trip decimal form of a double (NaN spelled out, since JSON
/// has no literal for it).
std::string num(double v) {
  if (std::isnan(v)) return "nan";
  return json(v).dump();
}

long long parse_ll(const std::string& s) {
  size_t used = 0;
  const long long v = std::stoll(s, &used);
  if (used != s.size()) throw std::invalid_argument("not an integer: '" + s + "'");
  return v;
}

uint64_t parse_u64(const std::string& s) {
  size_t used = 0;
  const unsigned long long v = std::stoull(s, &used);
  if (used != s.size()) throw std::invalid_argument("not an unsigned integer: '" + s + "'");
  return v;
}

double parse_f64(const std::string& s) {
  size_t used = 0;
  const double v = std::stod(s, &used);
  if (used != s.size()) throw std::invalid_argument("not a number: '" + s + "'");
  return v;
}

std::string trim(const std::string& s) {
  const auto a = s.find_first_not_of(" \t\r\n");
  if (a == std::string::npos) return "";
  const auto b = s.find_last_not_of(" \t\r\n");
  return s.substr(a, b - a + 1);
}

}  // namespace

std::string train_config_to_json(const TrainConfig& cfg) {
  json j;
  j["net"] = net_to_json(cfg.net);
  j["batch_size"] = cfg.batch_size;
  j["total_steps"] = cfg.total_steps;
  j["lr_initial"] = cfg.lr_initial;
  j["lr_drop_to"] = cfg.lr_drop_to;
  j["drop_step"] = cfg.drop_step;
  j["sigma_min"] = cfg.sigma_min;
  j["sigma_max"] = cfg.sigma_max;
  j["blur_family"] = to_string(cfg.blur_family);
  j["lr_patch"] = cfg.lr_patch;
  j["pca_samples"] = cfg.pca_samples;
  j["seed"] = cfg.seed;
  j["dtype"] = cfg.dtype;
  j["dataset_dir"] = cfg.dataset_dir;
  j["val_dir"] = cfg.val_dir;
  j["checkpoint_dir"] = cfg.checkpoint_dir;
  j["eval_every"] = cfg.eval_every;
  j["checkpoint_every"] = cfg.checkpoint_every;
  return j.dump(2) + "\n";
}

TrainConfig train_config_from_json(const std::string& text) {
  const json j = json::parse(text);
  TrainConfig cfg;
  cfg.net = net_from_json(j.at("net"));
  cfg.batch_size = j.at("batch_size").get<int>();
  cfg.total_steps = j.at("total_steps").get<long long>();
  cfg.lr_initial = j.at("lr_initial").get<double>();
  cfg.lr_drop_to = j.at("lr_drop_to").get<double>();
  cfg.drop_step = j.at("drop_step").get<long long>();
  cfg.sigma_min = j.at("sigma_min").get<double>();
  cfg.sigma_max = j.at("sigma_max").get<double>();
  cfg.blur_family = parse_blur_family(j.at("blur_family").get<std::string>());
  cfg.lr_patch = j.at("lr_patch").get<Eigen::Index>();
  cfg.pca_samples = j.at("pca_samples").get<int>();
  cfg.seed = j.at("seed").get<uint64_t>();
  cfg.dtype = j.at("dtype").get<std::string>();
  cfg.dataset_dir = j.at("dataset_dir").get<std::string>();
  cfg.val_dir = j.at("val_dir").get<std::string>();
  cfg.checkpoint_dir = j.at("checkpoint_dir").get<std::string>();
  cfg.eval_every = j.at("eval_every").get<long long>();
  cfg.checkpoint_every = j.at("checkpoint_every").get<long long>();
  return cfg;
}

std::string train_config_to_text(const TrainConfig& cfg) {
  std::ostringstream out;
  out << "net.variant = " << to_string(cfg.net.variant) << "\n"
      << "net.stages = " << cfg.net.stages << "\n"
      << "net.scale = " << cfg.net.scale << "\n"
      << "net.base_channels = " << cfg.net.base_channels << "\n"
      << "net.kernel_size = " << cfg.net.kernel_size << "\n"
      << "net.code_dim = " << cfg.net.code_dim << "\n"
      << "net.channels = " << cfg.net.channels << "\n"
      << "net.slope = " << num(cfg.net.slope) << "\n"
      << "net.down_mode = " << to_string(cfg.net.down_mode) << "\n"
      << "batch_size = " << cfg.batch_size << "\n"
      << "total_steps = " << cfg.total_steps << "\n"
      << "lr_initial = " << num(cfg.lr_initial) << "\n"
      << "lr_drop_to = " << num(cfg.lr_drop_to) << "\n"
      << "drop_step = " << cfg.drop_step << "\n"
      << "sigma_min = " << num(cfg.sigma_min) << "\n"
      << "sigma_max = " << num(cfg.sigma_max) << "\n"
      << "blur_family = " << to_string(cfg.blur_family) << "\n"
      << "lr_patch = " << cfg.lr_patch << "\n"
      << "pca_samples = " << cfg.pca_samples << "\n"
      << "seed = " << cfg.seed << "\n"
      << "dtype = " << cfg.dtype << "\n"
      << "dataset_dir = " << cfg.dataset_dir << "\n"
      << "val_dir = " << cfg.val_dir << "\n"
      << "checkpoint_dir = " << cfg.checkpoint_dir << "\n"
      << "eval_every = " << cfg.eval_every << "\n"
      << "checkpoint_every = " << cfg.checkpoint_every << "\n";
  return out.str();
}

void apply_config_kv(TrainConfig& cfg, const std::string& key, const std::string& value) {
  if (key == "net.variant") cfg.net.variant = parse_variant(value);
  else if (key == "net.stages") cfg.net.stages = static_cast<int>(parse_ll(value));
  else if (key == "net.scale") cfg.net.scale = static_cast<int>(parse_ll(value));
  else if (key == "net.base_channels") cfg.net.base_channels = static_cast<int>(parse_ll(value));
  else if (key == "net.kernel_size") cfg.net.kernel_size = static_cast<int>(parse_ll(value));
  else if (key == "net.code_dim") cfg.net.code_dim = static_cast<int>(parse_ll(value));
  else if (key == "net.channels") cfg.net.channels = static_cast<int>(parse_ll(value));
  else if (key == "net.slope") cfg.net.slope = parse_f64(value);
  else if (key == "net.down_mode") cfg.net.down_mode = parse_down_mode(value);
  else if (key == "batch_size") cfg.batch_size = static_cast<int>(parse_ll(value));
  else if (key == "total_steps") cfg.total_steps = parse_ll(value);
  else if (key == "lr_initial") cfg.lr_initial = parse_f64(value);
  else if (key == "lr_drop_to") cfg.lr_drop_to = parse_f64(value);
  else if (key == "drop_step") cfg.drop_step = parse_ll(value);
  else if (key == "sigma_min") cfg.sigma_min = parse_f64(value);
  else if (key == "sigma_max") cfg.sigma_max = parse_f64(value);
  else if (key == "blur_family") cfg.blur_family = parse_blur_family(value);
  else if (key == "lr_patch") cfg.lr_patch = static_cast<Eigen::Index>(parse_ll(value));
  else if (key == "pca_samples") cfg.pca_samples = static_cast<int>(parse_ll(value));
  else if (key == "seed") cfg.seed = parse_u64(value);
  else if (key == "dtype") cfg.dtype = value;
  else if (key == "dataset_dir") cfg.dataset_dir = value;
  else if (key == "val_dir") cfg.val_dir = value;
  else if (key == "checkpoint_dir") cfg.checkpoint_dir = value;
  else if (key == "eval_every") cfg.eval_every = parse_ll(value);
  else if (key == "checkpoint_every") cfg.checkpoint_every = parse_ll(value);
  else throw std::invalid_argument("unknown config key '" + key + "'");
}

TrainConfig train_config_from_text(const std::string& text, const TrainConfig& base) {
  TrainConfig cfg = base;
  std::istringstream in(text);
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (const auto hash = line.find('#'); hash != std::string::npos) line.resize(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos)
      throw std::invalid_argument("config line " + std::to_string(line_no) +
                                  ": expected 'key = value', got '" + line + "'");
    try {
      apply_config_kv(cfg, trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
    } catch (const std::exception& e) {
      throw std::invalid_argument("config line " + std::to_string(line_no) + ": " + e.what());
    }
  }
  return cfg;
}

// ---------------------------------------------------------------------------
// Checkpoint plumbing
// ---------------------------------------------------------------------------

namespace {

std::string step_dir_name(long long step) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "step-%06lld", step);
  return buf;
}

/// Fields that must agree between a checkpoint and the config resuming it
/// for the run to be an exact continuation. Output paths, eval cadence, and
/// the step budget may change; everything touching the computation may not.
json resume_identity(const std::string& config_json) {
  json j = json::parse(config_json);
  for (const char* k : {"checkpoint_dir", "val_dir", "eval_every", "checkpoint_every",
                        "total_steps"})
    j.erase(k);
  return j;
}

template <class Scalar>
void save_checkpoint(const TrainConfig& cfg, const Network<Scalar>& net, const Adam<Scalar>& opt,
                     long long next_step, std::string* dir_out) {
  namespace fs = std::filesystem;
  const fs::path dir = fs::path(cfg.checkpoint_dir) / step_dir_name(next_step);
  fs::create_directories(dir);
  save_store(net.params(), (dir / "params").string());
  opt.save((dir / "opt").string());
  write_text_file(dir / "config.json", train_config_to_json(cfg));
  std::ostringstream rng;
  rng << "seed " << cfg.seed << "\nnext_step " << next_step << "\n";
  write_text_file(dir / "rng-state", rng.str());
  if (dir_out) *dir_out = dir.string();
}

long long read_next_step(const std::filesystem::path& rng_state) {
  std::istringstream in(read_text_file(rng_state));
  std::string key;
  uint64_t seed = 0;
  long long next_step = -1;
  if (!(in >> key >> seed) || key != "seed" || !(in >> key >> next_step) || key != "next_step" ||
      next_step < 0)
    throw std::runtime_error("malformed rng-state file " + rng_state.string());
  return next_step;
}

// --- NaN diagnostics --------------------------------------------------------

Image sanitize(const Image& img) {
  Image out = img;
  for (Eigen::Index i = 0; i < out.size(); ++i)
    if (!std::isfinite(out[i])) out[i] = 0.0;
  return out;
}

/// Min-max normalized single-channel render of an arbitrary map.
Image normalized_plane(const Image& map) {
  Image out = sanitize(map);
  const double lo = out.array().minCoeff(), hi = out.array().maxCoeff();
  if (hi > lo)
    out.array() = (out.array() - lo) / (hi - lo);
  else
    out.array().setZero();
  return out;
}

Image channel_mean(const Image& t) {
  Image out({1, t.dim(1), t.dim(2)});
  for (Eigen::Index c = 0; c < t.dim(0); ++c)
    for (Eigen::Index y = 0; y < t.dim(1); ++y)
      for (Eigen::Index x = 0; x < t.dim(2); ++x) out(0, y, x) += t(c, y, x);
  out.array() /= static_cast<double>(t.dim(0));
  return out;
}

template <class Scalar>
void dump_nan_batch(const TrainConfig& cfg, long long step,
                    const std::vector<Sample<Scalar>>& batch, const Network<Scalar>& net,
                    const LossBreakdown& bd) {
  namespace fs = std::filesystem;
  const fs::path dir = fs::path(cfg.checkpoint_dir) / "nan-dump";
  fs::create_directories(dir);
  json manifest;
  manifest["step"] = step;
  manifest["loss"] = {{"sr", num(bd.sr)}, {"kernel", num(bd.kernel)}, {"lr", num(bd.lr)},
                      {"total", num(bd.total)}};
  for (size_t i = 0; i < batch.size(); ++i) {
    const auto& s = batch[i];
    char tag[32];
    std::snprintf(tag, sizeof tag, "sample-%02zu", i);
    const fs::path sdir = dir / tag;
    fs::create_directories(sdir);
    save_image(sdir / "hr.png", sanitize(s.hr.template cast<double>()));
    save_image(sdir / "lr.png", sanitize(s.lr.template cast<double>()));
    KernelSidecar sc;
    sc.k = cfg.net.kernel_size;
    sc.spec = s.spec;
    sc.down_mode = cfg.net.down_mode;
    save_kernel(sdir / "kernel-gt", s.k_gt, sc);
    const auto res = net.infer(s.lr);
    save_image(sdir / "sr.png", sanitize(res.sr.template cast<double>()));
    for (const auto& tr : res.traces) {
      char st[48];
      if (!tr.i_sr.empty()) {
        std::snprintf(st, sizeof st, "stage-%02d-isr.png", tr.t);
        save_image(sdir / st, sanitize(tr.i_sr.template cast<double>()));
      } else if (!tr.f_sr.empty()) {
        std::snprintf(st, sizeof st, "stage-%02d-fsr.png", tr.t);
        save_image(sdir / st, normalized_plane(channel_mean(tr.f_sr.template cast<double>())));
      }
      if (!tr.r_lr.empty()) {
        std::snprintf(st, sizeof st, "stage-%02d-rlr.png", tr.t);
        Image r = sanitize(tr.r_lr.template cast<double>());
        r.array() = r.array().abs();
        save_image(sdir / st, normalized_plane(channel_mean(r)));
      }
    }
    json e;
    e["sigma_x"] = s.spec.sigma_x;
    e["sigma_y"] = s.spec.sigma_y;
    e["theta"] = s.spec.theta;
    manifest["samples"].push_back(e);
  }
  write_text_file(dir / "batch.json", manifest.dump(2) + "\n");
}

}  // namespace

// ---------------------------------------------------------------------------
// Training loop
// ---------------------------------------------------------------------------

template <class Scalar>
TrainResult train(const TrainConfig& cfg, const std::string& resume_dir) {
  namespace fs = std::filesystem;
  require_train_config(cfg);
  if (cfg.checkpoint_dir.empty())
    throw std::invalid_argument("train: checkpoint_dir must be set");
  fs::create_directories(cfg.checkpoint_dir);

  Dataset<Scalar> ds = load_dataset<Scalar>(cfg.dataset_dir);
  const Eigen::Index need = cfg.lr_patch * cfg.net.scale;
  for (size_t i = 0; i < ds.images.size(); ++i)
    if (ds.images[i].dim(1) < need || ds.images[i].dim(2) < need)
      throw std::invalid_argument("train: patch too large for " + ds.paths[i]);

  Dataset<Scalar> val;
  if (!cfg.val_dir.empty()) {
    val = load_dataset<Scalar>(cfg.val_dir);
    std::set<std::string> train_names;
    for (const auto& p : ds.paths) train_names.insert(fs::path(p).filename().string());
    for (const auto& p : val.paths)
      if (train_names.count(fs::path(p).filename().string()))
        throw std::invalid_argument("train: validation file " + p +
                                    " shares its name with a training file");
  }
  if (cfg.eval_every > 0 && val.images.empty())
    throw std::invalid_argument("train: eval_every needs val_dir");

  KernelCodeContext ctx;
  const KernelCodeContext* ctx_p = nullptr;
  if (cfg.net.variant == Variant::kKcbpn) {
    ctx = make_code_context(cfg);
    ctx_p = &ctx;
    save_code_context(fs::path(cfg.checkpoint_dir) / "code-basis", ctx);
  }

  Network<Scalar> net(cfg.net, Rng::hash_str(cfg.seed, "init"), ctx);
  Adam<Scalar> opt(net.params());

  long long start_step = 0;
  if (!resume_dir.empty()) {
    const fs::path rd(resume_dir);
    const json stored = resume_identity(read_text_file(rd / "config.json"));
    const json current = resume_identity(train_config_to_json(cfg));
    if (stored != current)
      throw std::invalid_argument("resume: config does not match the checkpoint (stored " +
                                  stored.dump() + " vs current " + current.dump() + ")");
    load_store(net.params(), (rd / "params").string());
    opt.load((rd / "opt").string());
    start_step = read_next_step(rd / "rng-state");
    if (start_step >= cfg.total_steps)
      throw std::invalid_argument("resume: checkpoint is already at step " +
                                  std::to_string(start_step) + " of " +
                                  std::to_string(cfg.total_steps));
  }

  const Kernel mean_k = family_mean_kernel(cfg);
  std::vector<Sample<Scalar>> val_set;
  if (!val.images.empty()) val_set = make_val_set(cfg, val.images, ctx_p);

  const fs::path metrics_path = fs::path(cfg.checkpoint_dir) / "metrics.csv";
  const bool append_metrics = !resume_dir.empty() && fs::exists(metrics_path);
  std::ofstream metrics(metrics_path,
                        append_metrics ? std::ios::app : std::ios::trunc);
  if (!metrics) throw std::runtime_error("cannot write " + metrics_path.string());
  if (!append_metrics) metrics << "step,lr,loss_sr,loss_kernel,loss_lr,loss_total\n";

  const fs::path eval_path = fs::path(cfg.checkpoint_dir) / "eval.csv";
  std::ofstream eval_csv;
  if (!val_set.empty()) {
    const bool append_eval = !resume_dir.empty() && fs::exists(eval_path);
    eval_csv.open(eval_path, append_eval ? std::ios::app : std::ios::trunc);
    if (!eval_csv) throw std::runtime_error("cannot write " + eval_path.string());
    if (!append_eval) eval_csv << EvalRow::csv_header() << "\n";
  }

  const LossWeights w;
  TrainResult result;
  result.checkpoint_dir = cfg.checkpoint_dir;
  result.metrics_csv = metrics_path.string();

  for (long long step = start_step; step < cfg.total_steps; ++step) {
    const auto batch = synth_batch(cfg, step, ds.images, ctx_p);
    Tape<Scalar> tape;
    net.params().zero_grad();
    Var<Scalar> total;
    LossBreakdown acc;
    for (const auto& s : batch) {
      const auto g = net.forward(tape, s.lr);
      const Var<Scalar> hr = tape.input(s.hr);
      Var<Scalar> k_gt;
      if (cfg.net.variant == Variant::kKbpn) {
        k_gt = tape.input(s.k_gt.template cast<Scalar>());
      } else if (cfg.net.variant == Variant::kKcbpn) {
        Tensor<Scalar> code({static_cast<Eigen::Index>(s.code_gt.size())});
        for (Eigen::Index i = 0; i < code.size(); ++i)
          code[i] = static_cast<Scalar>(s.code_gt[i]);
        k_gt = tape.input(std::move(code));
      }
      LossBreakdown bd;
      const auto l = total_loss(cfg.net.variant, g.sr, g.kernel, hr, k_gt, g.lr, cfg.net.scale,
                                cfg.net.down_mode, w, &bd);
      total = total ? add(total, l) : l;
      acc.sr += bd.sr;
      acc.kernel += bd.kernel;
      acc.lr += bd.lr;
      acc.total += bd.total;
    }
    total = scale(total, Scalar(1) / static_cast<Scalar>(cfg.batch_size));
    const double n = static_cast<double>(cfg.batch_size);
    acc.sr /= n;
    acc.kernel /= n;
    acc.lr /= n;
    acc.total /= n;
    const double loss_val = static_cast<double>(total.value()[0]);

    if (!std::isfinite(loss_val)) {
      acc.total = loss_val;
      dump_nan_batch(cfg, step, batch, net, acc);
      throw NanAbort("non-finite loss at step " + std::to_string(step) + "; batch dumped to " +
                     (fs::path(cfg.checkpoint_dir) / "nan-dump").string());
    }

    tape.backward(total);
    const double lr_now = lr_schedule(cfg, step);
    opt.step(lr_now);

    metrics << step << ',' << num(lr_now) << ',' << num(acc.sr) << ',' << num(acc.kernel) << ','
            << num(acc.lr) << ',' << num(loss_val) << '\n';
    result.final_loss = loss_val;

    const long long done = step + 1;
    const bool last = done == cfg.total_steps;
    if (last || (cfg.checkpoint_every > 0 && done % cfg.checkpoint_every == 0))
      save_checkpoint(cfg, net, opt, done, last ? &result.final_step_dir : nullptr);
    if (!val_set.empty() && cfg.eval_every > 0 && (last || done % cfg.eval_every == 0)) {
      EvalRow row = eval_hook(net, val_set, cfg, mean_k);
      row.step = done;
      eval_csv << row.step << ',' << num(row.psnr) << ',' << num(row.ssim) << ','
               << num(row.kernel_l1) << ',' << num(row.baseline_kernel_l1) << '\n';
      result.eval_csv = eval_path.string();
    }
  }
  metrics.flush();
  result.steps = cfg.total_steps - start_step;
  return result;
}

template TrainResult train<float>(const TrainConfig&, const std::string&);
template TrainResult train<double>(const TrainConfig&, const std::string&);

TrainResult train_any(const TrainConfig& cfg, const std::string& resume_dir) {
  if (cfg.dtype == "float64") return train<double>(cfg, resume_dir);
  return train<float>(cfg, resume_dir);
}

// ---------------------------------------------------------------------------
// Loading a trained model back
// ---------------------------------------------------------------------------

template <class Scalar>
std::pair<TrainConfig, std::unique_ptr<Network<Scalar>>> load_model(const std::string& step_dir) {
  namespace fs = std::filesystem;
  const fs::path dir(step_dir);
  const TrainConfig cfg = train_config_from_json(read_text_file(dir / "config.json"));
  KernelCodeContext ctx;
  if (cfg.net.variant == Variant::kKcbpn) {
    const fs::path basis = dir.parent_path() / "code-basis";
    ctx = fs::exists(basis) ? load_code_context(basis) : make_code_context(cfg);
  }
  auto net = std::make_unique<Network<Scalar>>(cfg.net, Rng::hash_str(cfg.seed, "init"), ctx);
  load_store(net->params(), (dir / "params").string());
  return {cfg, std::move(net)};
}

template std::pair<TrainConfig, std::unique_ptr<Network<float>>> load_model<float>(
    const std::string&);
template std::pair<TrainConfig, std::unique_ptr<Network<double>>> load_model<double>(
    const std::string&);

}  // namespace kbsr
