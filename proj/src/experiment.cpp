#include "cvlp/experiment.hpp"

#include <algorithm>
#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <map>
#include <nlohmann/json.hpp>
#include <set>
#include <sstream>

#include "cvlp/errors.hpp"

namespace cvlp::exp {

namespace fs = std::filesystem;
namespace pt = boost::property_tree;
using nlohmann::json;

namespace {

std::string real(double x) {
  if (std::isinf(x)) return x > 0 ? "inf" : "-inf";
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", x);
  return buf;
}

template <class T>
std::string join(const std::vector<T>& xs) {
  std::string out;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    if (i) out += ", ";
    if constexpr (std::is_floating_point_v<T>) {
      out += real(xs[i]);
    } else {
      out += std::to_string(xs[i]);
    }
  }
  return out;
}

std::string split_name(eval::SplitKind k) {
  return k == eval::SplitKind::class_incremental ? "class" : "instance";
}

eval::SplitKind parse_split(const std::string& s) {
  if (s == "class") return eval::SplitKind::class_incremental;
  if (s == "instance") return eval::SplitKind::instance_incremental;
  throw ConfigError("split must be 'class' or 'instance', got '" + s + "'");
}

std::string activation_name(model::Activation a) { return a == model::Activation::gelu ? "gelu" : "relu"; }

model::Activation parse_activation(const std::string& s) {
  if (s == "gelu") return model::Activation::gelu;
  if (s == "relu") return model::Activation::relu;
  throw ConfigError("activation must be 'gelu' or 'relu', got '" + s + "'");
}

std::string trim(std::string s) {
  const auto b = s.find_first_not_of(" \t");
  const auto e = s.find_last_not_of(" \t");
  return b == std::string::npos ? std::string() : s.substr(b, e - b + 1);
}

// Typed reader over one parsed INI tree that rejects unknown sections and keys.
class Reader {
 public:
  explicit Reader(const pt::ptree& tree) : tree_(tree) {}

  std::string text(const std::string& section, const std::string& key, const std::string& fallback) {
    used_[section].insert(key);
    const auto sec = tree_.get_child_optional(section);
    if (!sec) return fallback;
    const auto v = sec->get_optional<std::string>(key);
    return v ? trim(*v) : fallback;
  }

  double number(const std::string& section, const std::string& key, double fallback) {
    const auto s = text(section, key, real(fallback));
    try {
      std::size_t used = 0;
      const double v = std::stod(s, &used);
      if (used != s.size()) throw std::invalid_argument(s);
      return v;
    } catch (const std::exception&) {
      throw ConfigError("[" + section + "] " + key + ": '" + s + "' is not a number");
    }
  }

  template <class Int>
  Int integer(const std::string& section, const std::string& key, Int fallback) {
    const auto s = text(section, key, std::to_string(fallback));
    try {
      std::size_t used = 0;
      const long long v = std::stoll(s, &used);
      if (used != s.size()) throw std::invalid_argument(s);
      if (v < 0 && std::is_unsigned_v<Int>) throw std::out_of_range(s);
      return static_cast<Int>(v);
    } catch (const std::exception&) {
      throw ConfigError("[" + section + "] " + key + ": '" + s + "' is not a valid integer");
    }
  }

  bool flag(const std::string& section, const std::string& key, bool fallback) {
    const auto s = text(section, key, fallback ? "true" : "false");
    if (s == "true" || s == "1") return true;
    if (s == "false" || s == "0") return false;
    throw ConfigError("[" + section + "] " + key + ": '" + s + "' is not true/false");
  }

  template <class T>
  std::vector<T> list(const std::string& section, const std::string& key, const std::vector<T>& fallback) {
    const auto s = text(section, key, join(fallback));
    std::vector<T> out;
    std::stringstream in(s);
    for (std::string item; std::getline(in, item, ',');) {
      item = trim(item);
      if (item.empty()) continue;
      try {
        if constexpr (std::is_floating_point_v<T>) {
          out.push_back(std::stod(item));
        } else {
          out.push_back(static_cast<T>(std::stoull(item)));
        }
      } catch (const std::exception&) {
        throw ConfigError("[" + section + "] " + key + ": bad list item '" + item + "'");
      }
    }
    return out;
  }

  void reject_unknown() const {
    for (const auto& [section, body] : tree_) {
      const auto it = used_.find(section);
      if (it == used_.end()) throw ConfigError("unknown config section [" + section + "]");
      for (const auto& [key, value] : body) {
        if (!it->second.count(key)) throw ConfigError("unknown key '" + key + "' in [" + section + "]");
      }
    }
  }

 private:
  const pt::ptree& tree_;
  std::map<std::string, std::set<std::string>> used_;
};

std::string run_dir_name(std::uint64_t seed) { return "seed_" + std::to_string(seed); }

std::string mean_fmt(double x) { return real(x); }

}  // namespace

void ExperimentConfig::validate() const {
  generator.validate();
  train.validate();
  if (num_steps == 0) throw ConfigError("num_steps must be at least 1");
  if (samples_per_chunk == 0) throw ConfigError("samples_per_chunk must be positive");
  if (split == eval::SplitKind::class_incremental &&
      num_steps > static_cast<std::uint32_t>(generator.num_classes)) {
    throw ConfigError("a class split cannot have more steps than classes");
  }
  if (seeds.empty()) throw ConfigError("seed list is empty");
  for (double b : memory_budgets) {
    if (!(b > 0.0) || b > 1.0) throw ConfigError("memory budgets must lie in (0, 1]");
  }
  if (train.dims.d_img != generator.d_img || train.dims.vocab_size != generator.vocab_size) {
    throw ConfigError("model input sizes must match the generator");
  }
  if (eval.num_datasets < 1 || eval.per_class == 0 || eval.prompt_variants < 1) {
    throw ConfigError("eval settings must be positive");
  }
  if (eval.retrieval_size < 10) throw ConfigError("retrieval_size must be at least 10 for R@10");
}

bool ExperimentConfig::operator==(const ExperimentConfig& other) const {
  return to_ini(*this) == to_ini(other);
}

std::string to_ini(const ExperimentConfig& c) {
  const auto& g = c.generator;
  const auto& t = c.train;
  std::ostringstream o;
  o << "[stream]\n"
    << "num_classes = " << g.num_classes << "\n"
    << "d_img = " << g.d_img << "\n"
    << "vocab_size = " << g.vocab_size << "\n"
    << "tokens_per_class = " << g.tokens_per_class << "\n"
    << "shared_tokens = " << g.shared_tokens << "\n"
    << "shared_fraction = " << real(g.shared_fraction) << "\n"
    << "noise_std = " << real(g.noise_std) << "\n"
    << "min_len = " << g.min_len << "\n"
    << "max_len = " << g.max_len << "\n"
    << "split = " << split_name(c.split) << "\n"
    << "num_steps = " << c.num_steps << "\n"
    << "samples_per_chunk = " << c.samples_per_chunk << "\n\n";
  o << "[model]\n"
    << "d_tok = " << t.dims.d_tok << "\n"
    << "d_emb = " << t.dims.d_emb << "\n"
    << "hidden = " << t.dims.hidden << "\n"
    << "activation = " << activation_name(t.dims.activation) << "\n"
    << "init_std = " << real(t.dims.init_std) << "\n"
    << "fan_in_init = " << (t.dims.fan_in_init ? "true" : "false") << "\n"
    << "init_tau = " << real(t.dims.init_tau) << "\n"
    << "min_tau = " << real(t.dims.min_tau) << "\n"
    << "max_tau = " << real(t.dims.max_tau) << "\n\n";
  o << "[train]\n"
    << "epochs_per_step = " << t.epochs_per_step << "\n"
    << "batch_size = " << t.batch_size << "\n"
    << "lr = " << real(t.base_lr) << "\n"
    << "warmup_fraction = " << real(t.warmup_fraction) << "\n"
    << "momentum = " << real(t.sgd.momentum) << "\n"
    << "weight_decay = " << real(t.sgd.weight_decay) << "\n"
    << "gamma = " << real(t.gamma) << "\n"
    << "max_grad_norm = " << real(t.max_grad_norm) << "\n"
    << "replay_fraction = " << real(t.replay_fraction) << "\n"
    << "memory_fraction = " << real(t.memory_fraction) << "\n"
    << "joint_from_scratch = " << (t.joint_from_scratch ? "true" : "false") << "\n"
    << "distill_scope = " << train::to_string(t.distill_scope) << "\n\n";
  o << "[loss]\n"
    << "alpha = " << real(t.weights.alpha) << "\n"
    << "eta = " << real(t.weights.eta) << "\n"
    << "lambda = " << real(t.weights.lambda) << "\n"
    << "tau_d_old = " << real(t.weights.tau_d_old) << "\n\n";
  o << "[generation]\n"
    << "num_pseudo = " << t.gen.num_pseudo << "\n"
    << "s_min = " << real(t.gen.s_min) << "\n"
    << "s_max = " << real(t.gen.s_max) << "\n"
    << "gen_iters = " << t.gen.gen_iters << "\n"
    << "gen_lr = " << real(t.gen.gen_lr) << "\n"
    << "anchor_only = " << (t.gen.anchor_only ? "true" : "false") << "\n"
    << "use_snapshot = " << (t.gen.use_snapshot ? "true" : "false") << "\n"
    << "max_retries = " << t.gen.max_retries << "\n\n";
  o << "[eval]\n"
    << "num_datasets = " << c.eval.num_datasets << "\n"
    << "per_class = " << c.eval.per_class << "\n"
    << "retrieval_size = " << c.eval.retrieval_size << "\n"
    << "prompt_variants = " << c.eval.prompt_variants << "\n\n";
  o << "[experiment]\n"
    << "out_dir = " << c.out_dir.string() << "\n"
    << "seeds = " << join(c.seeds) << "\n"
    << "memory_budgets = " << join(c.memory_budgets) << "\n"
    << "sweep_strategy = " << train::to_string(c.sweep_strategy) << "\n"
    << "strategy = " << train::to_string(t.strategy) << "\n"
    << "seed = " << t.seed << "\n";
  return o.str();
}

ExperimentConfig from_ini(const std::string& text) {
  pt::ptree tree;
  std::istringstream in(text);
  try {
    pt::read_ini(in, tree);
  } catch (const pt::ini_parser_error& e) {
    throw ConfigError("config syntax error on line " + std::to_string(e.line()) + ": " + e.message());
  }
  Reader r(tree);
  ExperimentConfig c;
  auto& g = c.generator;
  auto& t = c.train;
  g.num_classes = r.integer("stream", "num_classes", g.num_classes);
  g.d_img = r.integer("stream", "d_img", g.d_img);
  g.vocab_size = r.integer("stream", "vocab_size", g.vocab_size);
  g.tokens_per_class = r.integer("stream", "tokens_per_class", g.tokens_per_class);
  g.shared_tokens = r.integer("stream", "shared_tokens", g.shared_tokens);
  g.shared_fraction = r.number("stream", "shared_fraction", g.shared_fraction);
  g.noise_std = r.number("stream", "noise_std", g.noise_std);
  g.min_len = r.integer("stream", "min_len", g.min_len);
  g.max_len = r.integer("stream", "max_len", g.max_len);
  c.split = parse_split(r.text("stream", "split", split_name(c.split)));
  c.num_steps = r.integer("stream", "num_steps", c.num_steps);
  c.samples_per_chunk = r.integer("stream", "samples_per_chunk", c.samples_per_chunk);

  t.dims.d_img = g.d_img;
  t.dims.vocab_size = g.vocab_size;
  t.dims.d_tok = r.integer("model", "d_tok", t.dims.d_tok);
  t.dims.d_emb = r.integer("model", "d_emb", t.dims.d_emb);
  t.dims.hidden = r.integer("model", "hidden", t.dims.hidden);
  t.dims.activation = parse_activation(r.text("model", "activation", activation_name(t.dims.activation)));
  t.dims.init_std = r.number("model", "init_std", t.dims.init_std);
  t.dims.fan_in_init = r.flag("model", "fan_in_init", t.dims.fan_in_init);
  t.dims.init_tau = r.number("model", "init_tau", t.dims.init_tau);
  t.dims.min_tau = r.number("model", "min_tau", t.dims.min_tau);
  t.dims.max_tau = r.number("model", "max_tau", t.dims.max_tau);

  t.epochs_per_step = r.integer("train", "epochs_per_step", t.epochs_per_step);
  t.batch_size = r.integer("train", "batch_size", t.batch_size);
  t.base_lr = r.number("train", "lr", t.base_lr);
  t.warmup_fraction = r.number("train", "warmup_fraction", t.warmup_fraction);
  t.sgd.momentum = r.number("train", "momentum", t.sgd.momentum);
  t.sgd.weight_decay = r.number("train", "weight_decay", t.sgd.weight_decay);
  t.gamma = r.number("train", "gamma", t.gamma);
  t.max_grad_norm = r.number("train", "max_grad_norm", t.max_grad_norm);
  t.replay_fraction = r.number("train", "replay_fraction", t.replay_fraction);
  t.memory_fraction = r.number("train", "memory_fraction", t.memory_fraction);
  t.joint_from_scratch = r.flag("train", "joint_from_scratch", t.joint_from_scratch);
  t.distill_scope = train::parse_distill_scope(r.text("train", "distill_scope", train::to_string(t.distill_scope)));

  t.weights.alpha = r.number("loss", "alpha", t.weights.alpha);
  t.weights.eta = r.number("loss", "eta", t.weights.eta);
  t.weights.lambda = r.number("loss", "lambda", t.weights.lambda);
  t.weights.tau_d_old = r.number("loss", "tau_d_old", t.weights.tau_d_old);

  t.gen.num_pseudo = r.integer("generation", "num_pseudo", t.gen.num_pseudo);
  t.gen.s_min = r.number("generation", "s_min", t.gen.s_min);
  t.gen.s_max = r.number("generation", "s_max", t.gen.s_max);
  t.gen.gen_iters = r.integer("generation", "gen_iters", t.gen.gen_iters);
  t.gen.gen_lr = r.number("generation", "gen_lr", t.gen.gen_lr);
  t.gen.anchor_only = r.flag("generation", "anchor_only", t.gen.anchor_only);
  t.gen.use_snapshot = r.flag("generation", "use_snapshot", t.gen.use_snapshot);
  t.gen.max_retries = r.integer("generation", "max_retries", t.gen.max_retries);

  c.eval.num_datasets = r.integer("eval", "num_datasets", c.eval.num_datasets);
  c.eval.per_class = r.integer("eval", "per_class", c.eval.per_class);
  c.eval.retrieval_size = r.integer("eval", "retrieval_size", c.eval.retrieval_size);
  c.eval.prompt_variants = r.integer("eval", "prompt_variants", c.eval.prompt_variants);

  c.out_dir = r.text("experiment", "out_dir", c.out_dir.string());
  c.seeds = r.list("experiment", "seeds", c.seeds);
  c.memory_budgets = r.list("experiment", "memory_budgets", c.memory_budgets);
  c.sweep_strategy = train::parse_strategy(r.text("experiment", "sweep_strategy", train::to_string(c.sweep_strategy)));
  t.strategy = train::parse_strategy(r.text("experiment", "strategy", train::to_string(t.strategy)));
  t.seed = r.integer("experiment", "seed", t.seed);
  r.reject_unknown();
  c.validate();
  return c;
}

ExperimentConfig load_config(const fs::path& file) {
  std::ifstream in(file, std::ios::binary);
  if (!in) throw ConfigError("cannot open config file " + file.string());
  std::stringstream buf;
  buf << in.rdbuf();
  return from_ini(buf.str());
}

void save_config(const ExperimentConfig& c, const fs::path& file) {
  if (file.has_parent_path()) fs::create_directories(file.parent_path());
  std::ofstream out(file, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write " + file.string());
  out << to_ini(c);
}

std::uint64_t config_hash(const ExperimentConfig& c) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char ch : to_ini(c)) {
    h ^= ch;
    h *= 0x100000001b3ULL;
  }
  return h;
}

ExperimentConfig run_config(const ExperimentConfig& c, train::Strategy strategy, std::uint64_t seed) {
  ExperimentConfig r = c;
  r.train.strategy = strategy;
  r.train.seed = seed;
  r.generator.seed = seed;
  return r;
}

fs::path data_dir(const ExperimentConfig& c, std::uint64_t seed) {
  return c.out_dir / "data" / run_dir_name(seed);
}

fs::path run_dir(const ExperimentConfig& c, train::Strategy strategy, std::uint64_t seed) {
  return c.out_dir / "runs" / train::to_string(strategy) / run_dir_name(seed);
}

std::string budget_label(double budget) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "mem_%g", budget * 100.0);
  return buf;
}

fs::path sweep_dir(const ExperimentConfig& c, double budget, std::uint64_t seed) {
  return c.out_dir / "sweep" / budget_label(budget) / run_dir_name(seed);
}

fs::path report_dir(const ExperimentConfig& c) { return c.out_dir / "report"; }

std::string report_header(const ExperimentConfig& c) {
  return "# batch_size=" + std::to_string(c.train.batch_size) +
         " num_pseudo=" + std::to_string(c.train.gen.num_pseudo) +
         " (desk-scale batch sizes) epochs_per_step=" + std::to_string(c.train.epochs_per_step) +
         " num_steps=" + std::to_string(c.num_steps) + " split=" + split_name(c.split);
}

fs::path cmd_gen(const ExperimentConfig& c, std::uint64_t seed) {
  c.validate();
  auto spec = c.generator;
  spec.seed = seed;
  const auto samples = stream::generate_dataset(spec, c.samples_per_chunk * c.num_steps, 0);
  const auto chunks = c.split == eval::SplitKind::class_incremental
                          ? stream::split_class_incremental(samples, spec.num_classes, c.num_steps)
                          : stream::split_instance_incremental(samples, c.num_steps, seed);
  return stream::save_chunks(chunks, data_dir(c, seed));
}

std::vector<stream::PairChunk> load_or_generate(const ExperimentConfig& c, std::uint64_t seed) {
  const auto manifest = data_dir(c, seed) / "manifest.txt";
  if (!fs::exists(manifest)) return stream::load_chunks(cmd_gen(c, seed));
  return stream::load_chunks(manifest);
}

eval::EvalSuite eval_suite(const ExperimentConfig& c, std::uint64_t seed) {
  auto spec = c.generator;
  spec.seed = seed;
  return eval::build_eval_suite(spec, c.split, c.num_steps, c.eval);
}

train::RunResult cmd_train(const ExperimentConfig& c, const TrainRequest& req) {
  auto rc = run_config(c, req.strategy, req.seed);
  if (req.memory_fraction) rc.train.memory_fraction = *req.memory_fraction;
  rc.validate();
  const auto chunks = load_or_generate(rc, req.seed);
  if (chunks.size() != rc.num_steps) {
    throw FormatError("data directory holds " + std::to_string(chunks.size()) + " chunks, config wants " +
                          std::to_string(rc.num_steps),
                      0);
  }
  const auto suite = eval_suite(rc, req.seed);
  train::RunOptions opts;
  opts.out_dir = req.out ? *req.out : run_dir(rc, req.strategy, req.seed);
  opts.resume = req.resume;
  opts.stop_after = req.stop_after;
  opts.header = report_header(rc) + "\n# config_hash=" + std::to_string(config_hash(rc)) + "\n";
  fs::create_directories(opts.out_dir);
  save_config(rc, opts.out_dir / "config.ini");
  return train::run_stream(chunks, suite, rc.train, opts);
}

train::RunResult ensure_run(const ExperimentConfig& c, const TrainRequest& req) {
  auto rc = run_config(c, req.strategy, req.seed);
  if (req.memory_fraction) rc.train.memory_fraction = *req.memory_fraction;
  const fs::path dir = req.out ? *req.out : run_dir(rc, req.strategy, req.seed);
  const auto saved = dir / "config.ini";
  if (fs::exists(saved) && train::completed_steps(dir) == rc.num_steps) {
    try {
      if (load_config(saved) == rc) {
        train::RunResult r;
        r.reports = train::read_reports(dir);
        r.complete = true;
        return r;
      }
    } catch (const ConfigError&) {
      // Stale or unreadable config: rerun.
    }
  }
  TrainRequest fresh = req;
  fresh.resume = false;
  fresh.out = dir;
  return cmd_train(c, fresh);
}

eval::EvalReport cmd_eval(const ExperimentConfig& c, const fs::path& checkpoint, std::uint64_t seed,
                          std::uint32_t step) {
  c.validate();
  const auto model = model::DualEncoder::load(checkpoint);
  const auto suite = eval_suite(c, seed);
  if (step >= suite.chunk_eval.size()) throw ConfigError("step outside the stream");
  return eval::evaluate(model, suite, step, {}, false);
}

void cmd_sweep_memory(const ExperimentConfig& c) {
  c.validate();
  for (double budget : c.memory_budgets) {
    for (auto seed : c.seeds) {
      TrainRequest req;
      req.strategy = c.sweep_strategy;
      req.seed = seed;
      req.memory_fraction = budget;
      req.out = sweep_dir(c, budget, seed);
      ensure_run(c, req);
    }
  }
}

void cmd_ablate(const ExperimentConfig& c) {
  c.validate();
  for (auto s : {train::Strategy::er, train::Strategy::distill, train::Strategy::incclip}) {
    for (auto seed : c.seeds) {
      TrainRequest req;
      req.strategy = s;
      req.seed = seed;
      ensure_run(c, req);
    }
  }
}

namespace {

std::vector<RunSummary> scan_tree(const fs::path& root, std::uint32_t num_steps) {
  std::vector<RunSummary> out;
  if (!fs::is_directory(root)) return out;
  std::vector<fs::path> labels;
  for (const auto& e : fs::directory_iterator(root)) {
    if (e.is_directory()) labels.push_back(e.path());
  }
  std::sort(labels.begin(), labels.end());
  for (const auto& label : labels) {
    std::vector<std::pair<std::uint64_t, fs::path>> seeds;
    for (const auto& e : fs::directory_iterator(label)) {
      const auto name = e.path().filename().string();
      if (!e.is_directory() || name.rfind("seed_", 0) != 0) continue;
      seeds.emplace_back(std::stoull(name.substr(5)), e.path());
    }
    std::sort(seeds.begin(), seeds.end());
    for (const auto& [seed, dir] : seeds) {
      RunSummary s;
      s.label = label.filename().string();
      s.seed = seed;
      s.dir = dir;
      s.complete = train::completed_steps(dir) == num_steps;
      if (s.complete) s.reports = train::read_reports(dir);
      s.complete = s.complete && s.reports.size() == num_steps;
      out.push_back(std::move(s));
    }
  }
  return out;
}

std::vector<const RunSummary*> complete_with(const std::vector<RunSummary>& runs, const std::string& label) {
  std::vector<const RunSummary*> out;
  for (const auto& r : runs) {
    if (r.complete && r.label == label) out.push_back(&r);
  }
  return out;
}

std::vector<std::string> labels_of(const std::vector<RunSummary>& runs) {
  std::vector<std::string> out;
  for (const auto& r : runs) {
    if (r.complete && std::find(out.begin(), out.end(), r.label) == out.end()) out.push_back(r.label);
  }
  return out;
}

double mean_of(const std::vector<double>& xs) {
  double s = 0.0;
  for (double x : xs) s += x;
  return s / static_cast<double>(xs.size());
}

std::ofstream open_table(const fs::path& file, const std::string& header) {
  std::ofstream out(file, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write " + file.string());
  out << header << "\n";
  return out;
}

}  // namespace

std::vector<RunSummary> scan_runs(const ExperimentConfig& c) { return scan_tree(c.out_dir / "runs", c.num_steps); }
std::vector<RunSummary> scan_sweep(const ExperimentConfig& c) { return scan_tree(c.out_dir / "sweep", c.num_steps); }

double mean_final_accuracy(const std::vector<RunSummary>& runs, const std::string& label) {
  std::vector<double> xs;
  for (const auto* r : complete_with(runs, label)) xs.push_back(r->reports.back().zero_shot_avg);
  if (xs.empty()) throw ContractError("no complete runs labelled " + label);
  return mean_of(xs);
}

double mean_final_bwt(const std::vector<RunSummary>& runs, const std::string& label) {
  std::vector<double> xs;
  for (const auto* r : complete_with(runs, label)) {
    if (!r->reports.back().bwt) throw ContractError("run " + r->dir.string() + " has no BWT");
    xs.push_back(*r->reports.back().bwt);
  }
  if (xs.empty()) throw ContractError("no complete runs labelled " + label);
  return mean_of(xs);
}

ReportOutput cmd_report(const ExperimentConfig& c) {
  const auto runs = scan_runs(c);
  const auto sweep = scan_sweep(c);
  ReportOutput out;
  for (const auto* set : {&runs, &sweep}) {
    for (const auto& r : *set) {
      if (!r.complete) out.skipped.push_back(r.dir);
    }
  }
  const auto labels = labels_of(runs);
  const auto sweep_labels = labels_of(sweep);
  if (labels.empty() && sweep_labels.empty()) throw ContractError("no complete runs under " + c.out_dir.string());

  const fs::path dir = report_dir(c);
  fs::create_directories(dir);
  const std::string header = report_header(c);
  out.final_table = dir / "final_table.tsv";
  out.curves = dir / "curves.tsv";
  out.bwt = dir / "bwt.tsv";
  out.memory_sweep = dir / "memory_sweep.tsv";
  out.manifest = dir / "manifest.json";

  {
    auto f = open_table(out.final_table, header);
    f << "strategy\tseeds";
    for (std::int32_t d = 0; d < c.eval.num_datasets; ++d) f << "\tzs_" << d;
    f << "\tzs_avg\tr1_i2t\tr1_t2i\tr5_i2t\tr5_t2i\tr10_i2t\tr10_t2i\n";
    for (const auto& label : labels) {
      const auto rs = complete_with(runs, label);
      f << label << "\t" << rs.size();
      for (std::int32_t d = 0; d < c.eval.num_datasets; ++d) {
        std::vector<double> xs;
        for (const auto* r : rs) xs.push_back(r->reports.back().zero_shot.at(static_cast<std::size_t>(d)));
        f << "\t" << mean_fmt(mean_of(xs));
      }
      std::vector<double> avg;
      for (const auto* r : rs) avg.push_back(r->reports.back().zero_shot_avg);
      f << "\t" << mean_fmt(mean_of(avg));
      for (std::size_t k = 0; k < 3; ++k) {
        std::vector<double> a, b;
        for (const auto* r : rs) {
          a.push_back(r->reports.back().recall.i2t.at(k));
          b.push_back(r->reports.back().recall.t2i.at(k));
        }
        f << "\t" << mean_fmt(mean_of(a)) << "\t" << mean_fmt(mean_of(b));
      }
      f << "\n";
    }
  }
  {
    auto f = open_table(out.curves, header);
    f << "strategy\tstep\tzs_avg\n";
    for (const auto& label : labels) {
      const auto rs = complete_with(runs, label);
      for (std::uint32_t t = 0; t < c.num_steps; ++t) {
        std::vector<double> xs;
        for (const auto* r : rs) xs.push_back(r->reports.at(t).zero_shot_avg);
        f << label << "\t" << t << "\t" << mean_fmt(mean_of(xs)) << "\n";
      }
    }
  }
  {
    auto f = open_table(out.bwt, header);
    f << "strategy\tseeds\tbwt_mean\tbwt_per_seed\n";
    for (const auto& label : labels) {
      const auto rs = complete_with(runs, label);
      std::vector<double> xs;
      std::string per;
      for (const auto* r : rs) {
        const double b = r->reports.back().bwt.value_or(std::nan(""));
        xs.push_back(b);
        per += (per.empty() ? "" : ",") + mean_fmt(b);
      }
      f << label << "\t" << rs.size() << "\t" << mean_fmt(mean_of(xs)) << "\t" << per << "\n";
    }
  }
  {
    auto f = open_table(out.memory_sweep, header);
    f << "memory_budget\tseeds\tzs_avg\tbwt_mean\n";
    std::vector<std::pair<double, std::string>> ordered;
    for (const auto& label : sweep_labels) ordered.emplace_back(std::stod(label.substr(4)), label);
    std::sort(ordered.begin(), ordered.end());
    for (const auto& [pct, label] : ordered) {
      const auto rs = complete_with(sweep, label);
      std::vector<double> acc, b;
      for (const auto* r : rs) {
        acc.push_back(r->reports.back().zero_shot_avg);
        b.push_back(r->reports.back().bwt.value_or(std::nan("")));
      }
      f << real(pct / 100.0) << "\t" << rs.size() << "\t" << mean_fmt(mean_of(acc)) << "\t"
        << mean_fmt(mean_of(b)) << "\n";
    }
  }
  {
    json m;
    m["config_hash"] = std::to_string(config_hash(c));
    json list = json::array();
    for (const auto* set : {&runs, &sweep}) {
      for (const auto& r : *set) {
        list.push_back({{"label", r.label},
                        {"seed", r.seed},
                        {"dir", r.dir.string()},
                        {"complete", r.complete},
                        {"completed_steps", train::completed_steps(r.dir)}});
      }
    }
    m["runs"] = list;
    std::ofstream f(out.manifest, std::ios::binary | std::ios::trunc);
    f << m.dump(2) << "\n";
  }
  return out;
}

}  // namespace cvlp::exp
