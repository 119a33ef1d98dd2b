#include "cvlp/trainer.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <limits>
#include <nlohmann/json.hpp>
#include <random>

#include "cvlp/errors.hpp"
#include "cvlp/ops.hpp"

namespace cvlp::train {

using nlohmann::json;
namespace fs = std::filesystem;

namespace {

std::seed_seq::result_type lo(std::uint64_t x) { return static_cast<std::uint32_t>(x); }
std::seed_seq::result_type hi(std::uint64_t x) { return static_cast<std::uint32_t>(x >> 32); }

// Independent stream for (seed, step, index, purpose).
std::mt19937_64 derived(std::uint64_t seed, std::uint64_t step, std::uint64_t index,
                        std::uint32_t purpose) {
  std::seed_seq seq{lo(seed), hi(seed), lo(step), lo(index), hi(index), purpose, 0x7472616eu};
  return std::mt19937_64(seq);
}

enum Purpose : std::uint32_t { kShuffle = 1, kReplay = 2, kGen = 3, kModel = 4, kMemory = 5 };

std::uint64_t model_seed(const TrainConfig& c) { return derived(c.seed, 0, 0, kModel)(); }

constexpr std::pair<DistillScope, const char*> kScopes[] = {{DistillScope::batch, "batch"},
                                                            {DistillScope::memory, "memory"}};

constexpr std::pair<Strategy, const char*> kNames[] = {{Strategy::finetune, "finetune"},
                                                       {Strategy::er, "er"},
                                                       {Strategy::distill, "distill"},
                                                       {Strategy::incclip, "incclip"},
                                                       {Strategy::joint, "joint"}};

ad::Tensor with_pseudo(const ad::Tensor& real, const ad::Tensor& pseudo) {
  if (!pseudo.defined()) return real;
  const ad::Tensor parts[] = {real, pseudo};
  return ad::concat(parts, 0);
}

void append_line(const fs::path& file, const std::string& line) {
  std::ofstream out(file, std::ios::app | std::ios::binary);
  if (!out) throw std::runtime_error("cannot append to " + file.string());
  out << line << '\n';
}

std::vector<std::string> read_lines(const fs::path& file) {
  std::vector<std::string> lines;
  std::ifstream in(file, std::ios::binary);
  for (std::string l; std::getline(in, l);) {
    if (!l.empty()) lines.push_back(l);
  }
  return lines;
}

void write_text(const fs::path& file, const std::string& text) {
  const fs::path tmp = file.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot write " + tmp.string());
    out << text;
  }
  fs::rename(tmp, file);
}

}  // namespace

std::string to_string(Strategy s) {
  for (const auto& [v, n] : kNames) {
    if (v == s) return n;
  }
  throw ContractError("bad strategy value");
}

Strategy parse_strategy(const std::string& name) {
  for (const auto& [v, n] : kNames) {
    if (name == n) return v;
  }
  throw ConfigError("unknown strategy '" + name + "' (expected finetune, er, distill, incclip or joint)");
}

std::string to_string(DistillScope s) { return s == DistillScope::batch ? "batch" : "memory"; }

DistillScope parse_distill_scope(const std::string& name) {
  for (const auto& [v, n] : kScopes) {
    if (name == n) return v;
  }
  throw ConfigError("unknown distill scope '" + name + "' (expected batch or memory)");
}

Mechanisms mechanisms_of(Strategy s) {
  switch (s) {
    case Strategy::finetune: return {};
    case Strategy::er: return {true, false, false, false};
    case Strategy::distill: return {true, true, false, false};
    case Strategy::incclip: return {true, true, true, false};
    case Strategy::joint: return {false, false, false, true};
  }
  throw ContractError("bad strategy value");
}

void TrainConfig::validate() const {
  if (epochs_per_step < 1) throw ConfigError("epochs_per_step must be at least 1");
  if (batch_size < 2) throw ConfigError("batch size must be at least 2");
  weights.validate();
  gen.validate();
  if (!(base_lr > 0.0) || !std::isfinite(base_lr)) throw ConfigError("learning rate must be positive");
  if (warmup_fraction < 0.0 || warmup_fraction >= 1.0) throw ConfigError("warmup fraction must lie in [0, 1)");
  if (!(max_grad_norm > 0.0)) throw ConfigError("max_grad_norm must be positive (inf disables)");
  if (!(gamma > 0.0)) throw ConfigError("gamma must be positive (inf disables clipping)");
  if (replay_fraction < 0.0 || replay_fraction >= 1.0) throw ConfigError("replay fraction must lie in [0, 1)");
  if (!(memory_fraction > 0.0) || memory_fraction > 1.0) throw ConfigError("memory fraction must lie in (0, 1]");
  if (sgd.momentum < 0.0 || sgd.momentum >= 1.0) throw ConfigError("momentum must lie in [0, 1)");
  if (sgd.weight_decay < 0.0) throw ConfigError("weight decay must be non-negative");
}

std::string IterationRecord::to_json_line() const {
  json j{{"step", step}, {"epoch", epoch}, {"iter", iter}, {"l_c", l_c}, {"l_d", l_d},
         {"l_g", l_g},   {"lr", lr},       {"tau", tau},
         {"grad_norm", grad_norm}, {"max_norm_ratio", max_norm_ratio}};
  return j.dump();
}

IterationRecord IterationRecord::from_json_line(const std::string& line) {
  const auto j = json::parse(line);
  IterationRecord r;
  r.step = j.at("step").get<std::uint32_t>();
  r.epoch = j.at("epoch").get<std::uint32_t>();
  r.iter = j.at("iter").get<std::uint32_t>();
  r.l_c = j.at("l_c").get<double>();
  r.l_d = j.at("l_d").get<double>();
  r.l_g = j.at("l_g").get<double>();
  r.lr = j.at("lr").get<double>();
  r.tau = j.at("tau").get<double>();
  r.grad_norm = j.at("grad_norm").get<double>();
  r.max_norm_ratio = j.at("max_norm_ratio").get<double>();
  return r;
}

std::size_t memory_capacity(const TrainConfig& config, std::size_t stream_size) {
  const auto cap = static_cast<std::size_t>(std::llround(config.memory_fraction * static_cast<double>(stream_size)));
  return std::max<std::size_t>(cap, 1);
}

RunState initial_state(const TrainConfig& config, std::size_t stream_size) {
  return RunState(model::DualEncoder(config.dims, model_seed(config)),
                  memory::MemoryBuffer(memory_capacity(config, stream_size),
                                       derived(config.seed, 0, 0, kMemory)()));
}

model::ModelDims default_train_dims() {
  model::ModelDims d;
  d.init_tau = 0.01;
  d.max_tau = 0.01;
  return d;
}

negtext::GenConfig default_train_gen() {
  negtext::GenConfig g;
  g.gen_lr = 20.0;
  return g;
}

BatchLoss batch_loss(const model::DualEncoder& model, const model::DualEncoder* teacher,
                     std::span<const stream::PairSample> batch, std::size_t replayed,
                     const model::TokenEmbeddings& pseudo, const TrainConfig& config) {
  if (replayed > batch.size()) throw ContractError("more replayed rows than batch rows");
  const std::size_t fresh = batch.size() - replayed;
  const loss::BatchComposition comp{batch.size(), pseudo.count()};
  const auto image_emb = model.encode_images(batch);
  const auto real_text = model.encode_text(model::TokenBatch::of(batch));
  const auto pseudo_text = pseudo.count() > 0 ? model.encode_text_from_embeddings(pseudo) : ad::Tensor();
  const auto scores = model::similarity(image_emb, with_pseudo(real_text, pseudo_text));
  const auto inv_tau = model.logit_scale();
  BatchLoss out;
  out.contrastive = loss::contrastive_loss(scores, inv_tau, config.weights.alpha, comp).total;
  // Distillation covers the whole batch, or only its replayed part.
  const std::size_t d_begin = config.distill_scope == DistillScope::memory && replayed > 0 ? fresh : 0;
  if (teacher != nullptr) {
    const auto kept = batch.subspan(d_begin);
    const loss::BatchComposition dcomp{kept.size(), pseudo.count()};
    const auto new_scores =
        d_begin == 0 ? scores
                     : model::similarity(ad::slice_rows(image_emb, d_begin, batch.size()),
                                         with_pseudo(ad::slice_rows(real_text, d_begin, batch.size()), pseudo_text));
    const auto old_scores = model::similarity(
        teacher->encode_images(kept),
        with_pseudo(teacher->encode_text(model::TokenBatch::of(kept)),
                    pseudo.count() > 0 ? teacher->encode_text_from_embeddings(pseudo) : ad::Tensor()));
    out.distill = loss::distill_loss(new_scores, old_scores, inv_tau, config.weights.tau_d_old,
                                     config.weights.eta, dcomp)
                      .total;
  }
  out.total = loss::overall_loss(out.contrastive, out.distill, teacher ? config.weights.lambda : 0.0);
  return out;
}

StepResult train_step(RunState& state, std::span<const stream::PairSample> fresh,
                      std::span<const stream::PairSample> chunk, std::uint32_t step,
                      const TrainConfig& config, const TraceSink& sink, const fs::path& dump_file) {
  config.validate();
  if (fresh.empty()) throw ContractError("step " + std::to_string(step) + " has no training samples");
  const auto started = std::chrono::steady_clock::now();
  const Mechanisms mech = mechanisms_of(config.strategy);

  if (mech.all_seen && config.joint_from_scratch && step > 0) {
    state.model = model::DualEncoder(config.dims, model_seed(config));
  }
  auto& model = state.model;

  const double rho = mech.replay ? config.replay_fraction : 0.0;
  const std::size_t replayed = memory::replay_count(state.buffer, config.batch_size, rho);
  const std::size_t per_batch = config.batch_size - replayed;
  const std::size_t batches = (fresh.size() + per_batch - 1) / per_batch;
  const std::size_t total = batches * static_cast<std::size_t>(config.epochs_per_step);
  const ad::LrSchedule schedule{
      config.base_lr,
      static_cast<std::uint64_t>(std::floor(config.warmup_fraction * static_cast<double>(total))),
      total};

  ad::Sgd opt(model.parameters(), config.sgd);
  const ad::NormClipPolicy clip(config.gamma, model.init_norms());
  const model::DualEncoder* teacher =
      mech.distill && state.snapshot ? &state.snapshot->model() : nullptr;
  const bool pseudo_on = mech.pseudo && config.gen.num_pseudo > 0;

  StepResult result;
  result.step = step;
  std::vector<std::size_t> order(fresh.size());
  std::uint32_t iter = 0;
  for (std::int32_t epoch = 0; epoch < config.epochs_per_step; ++epoch) {
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    auto shuffle_rng = derived(config.seed, step, static_cast<std::uint64_t>(epoch), kShuffle);
    std::shuffle(order.begin(), order.end(), shuffle_rng);
    EpochLosses sums;

    for (std::size_t b = 0; b < batches; ++b, ++iter) {
      std::vector<stream::PairSample> picked;
      for (std::size_t i = b * per_batch; i < std::min(fresh.size(), (b + 1) * per_batch); ++i) {
        picked.push_back(fresh[order[i]]);
      }
      auto replay_rng = derived(config.seed, step, iter, kReplay);
      const auto batch = memory::mixed_batch(picked, state.buffer, config.batch_size, rho, replay_rng);

      std::optional<negtext::GenResult> gen;
      model::TokenEmbeddings pseudo;
      if (pseudo_on) {
        std::optional<model::DualEncoder> live;
        const model::DualEncoder* generator = nullptr;
        if (config.gen.use_snapshot && state.snapshot) {
          generator = &state.snapshot->model();
        } else {
          live.emplace(model.copy(false));
          generator = &*live;
        }
        // Hard negatives target the replayed images once memory holds any.
        const std::span<const stream::PairSample> targets =
            replayed > 0 ? std::span<const stream::PairSample>(batch).subspan(picked.size())
                         : std::span<const stream::PairSample>(batch);
        const auto text = generator->embed_tokens(model::TokenBatch::of(targets));
        gen = negtext::generate_batch(*generator, model::image_matrix(targets), text, config.gen,
                                      derived(config.seed, step, iter, kGen)());
        pseudo = negtext::stack(gen->texts);
      }

      const auto terms = batch_loss(model, teacher, batch, batch.size() - picked.size(), pseudo, config);
      const auto& total_loss = terms.total;

      IterationRecord rec;
      rec.step = step;
      rec.epoch = static_cast<std::uint32_t>(epoch);
      rec.iter = iter;
      rec.l_c = terms.contrastive.item();
      rec.l_d = terms.distill.defined() ? terms.distill.item() : 0.0;
      rec.l_g = gen ? gen->mean_final_loss : 0.0;
      rec.lr = schedule.lr_at(iter + 1);

      if (!std::isfinite(total_loss.item())) {
        if (!dump_file.empty()) stream::save_chunk({step, batch}, dump_file);
        throw NumericError("non-finite loss at step " + std::to_string(step) + ", iteration " +
                           std::to_string(iter) + (dump_file.empty() ? "" : "; batch written to " + dump_file.string()));
      }
      opt.zero_grad();
      total_loss.backward();
      rec.grad_norm = ad::clip_grad_norm(model.parameters(), config.max_grad_norm);
      opt.step(rec.lr);
      model.clamp_temperature();
      rec.tau = model.tau();
      rec.max_norm_ratio = clip.apply(model.parameters());
      sums.l_c += rec.l_c;
      sums.l_d += rec.l_d;
      sums.l_g += rec.l_g;
      if (sink) sink(rec);
    }
    const double n = static_cast<double>(batches);
    result.epochs.push_back({sums.l_c / n, sums.l_d / n, sums.l_g / n});
  }

  if (mech.replay) state.buffer.offer_all(chunk);
  state.snapshot.emplace(model, step);
  result.wall_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
  return result;
}

fs::path RunPaths::model_checkpoint(std::uint32_t step) const {
  char name[32];
  std::snprintf(name, sizeof name, "model_step_%03u.bin", step);
  return root / "checkpoints" / name;
}

fs::path RunPaths::buffer_checkpoint(std::uint32_t step) const {
  char name[32];
  std::snprintf(name, sizeof name, "buffer_step_%03u.bin", step);
  return root / "checkpoints" / name;
}

std::uint32_t completed_steps(const fs::path& run_dir) {
  const RunPaths paths{run_dir};
  std::ifstream in(paths.state_file());
  if (!in) return 0;
  const auto j = json::parse(in);
  return j.at("completed_steps").get<std::uint32_t>();
}

std::vector<eval::EvalReport> read_reports(const fs::path& run_dir) {
  std::vector<eval::EvalReport> out;
  for (const auto& l : read_lines(RunPaths{run_dir}.eval_log())) out.push_back(eval::EvalReport::from_json_line(l));
  return out;
}

std::vector<IterationRecord> read_trace(const fs::path& run_dir) {
  std::vector<IterationRecord> out;
  for (const auto& l : read_lines(RunPaths{run_dir}.trace_log())) out.push_back(IterationRecord::from_json_line(l));
  return out;
}

RunResult run_stream(std::span<const stream::PairChunk> chunks, const eval::EvalSuite& suite,
                     const TrainConfig& config, const RunOptions& options) {
  config.validate();
  if (chunks.empty()) throw ContractError("a stream needs at least one chunk");
  if (options.out_dir.empty()) throw ConfigError("run output directory not set");
  if (suite.chunk_eval.size() != chunks.size()) {
    throw ContractError("held-out splits (" + std::to_string(suite.chunk_eval.size()) +
                        ") do not match the stream's " + std::to_string(chunks.size()) + " steps");
  }
  const RunPaths paths{options.out_dir};
  fs::create_directories(paths.root / "checkpoints");
  const auto num_steps = static_cast<std::uint32_t>(chunks.size());
  std::size_t stream_size = 0;
  for (const auto& c : chunks) stream_size += c.samples.size();

  RunResult result;
  RunState state = initial_state(config, stream_size);
  eval::AccuracyMatrix history;
  std::uint32_t start = 0;

  if (options.resume) start = std::min(completed_steps(paths.root), num_steps);
  if (start > 0) {
    state.model = model::DualEncoder::load(paths.model_checkpoint(start - 1));
    state.buffer = memory::MemoryBuffer::load(paths.buffer_checkpoint(start - 1));
    state.snapshot.emplace(state.model, start - 1);
    std::string kept;
    for (const auto& l : read_lines(paths.eval_log())) {
      auto r = eval::EvalReport::from_json_line(l);
      if (r.step >= start) continue;
      kept += l + '\n';
      history.push_back(r.chunk_row);
      result.reports.push_back(std::move(r));
    }
    write_text(paths.eval_log(), kept);
    std::string trace;
    for (const auto& l : read_lines(paths.trace_log())) {
      if (IterationRecord::from_json_line(l).step < start) trace += l + '\n';
    }
    write_text(paths.trace_log(), trace);
    if (history.size() != start) {
      throw FormatError("eval log holds " + std::to_string(history.size()) + " steps, state says " +
                            std::to_string(start),
                        0);
    }
  } else {
    for (const auto& f : {paths.eval_log(), paths.trace_log(), paths.timing_log(), paths.state_file(),
                          paths.dump_file()}) {
      fs::remove(f);
    }
  }
  write_text(paths.header_file(), options.header);

  const Mechanisms mech = mechanisms_of(config.strategy);
  std::vector<stream::PairSample> seen;
  for (std::uint32_t t = 0; t < start && mech.all_seen; ++t) {
    seen.insert(seen.end(), chunks[t].samples.begin(), chunks[t].samples.end());
  }

  for (std::uint32_t t = start; t < num_steps; ++t) {
    if (options.stop_after && t >= *options.stop_after) break;
    const auto& chunk = chunks[t].samples;
    if (mech.all_seen) seen.insert(seen.end(), chunk.begin(), chunk.end());
    const std::span<const stream::PairSample> fresh =
        mech.all_seen ? std::span<const stream::PairSample>(seen) : std::span<const stream::PairSample>(chunk);

    std::ofstream trace(paths.trace_log(), std::ios::app | std::ios::binary);
    auto step = train_step(state, fresh, chunk, t, config,
                           [&trace](const IterationRecord& r) { trace << r.to_json_line() << '\n'; },
                           paths.dump_file());
    trace.close();

    step.checkpoint = paths.model_checkpoint(t);
    state.model.save(step.checkpoint);
    state.buffer.save(paths.buffer_checkpoint(t));

    auto report = eval::evaluate(state.model, suite, t, history, t + 1 == num_steps);
    append_line(paths.eval_log(), report.to_json_line());
    history.push_back(report.chunk_row);

    json timing{{"step", t}, {"wall_seconds", step.wall_seconds}};
    json losses = json::array();
    for (const auto& e : step.epochs) losses.push_back({{"l_c", e.l_c}, {"l_d", e.l_d}, {"l_g", e.l_g}});
    timing["epochs"] = losses;
    append_line(paths.timing_log(), timing.dump());

    json st{{"completed_steps", t + 1}, {"total_steps", num_steps}, {"strategy", to_string(config.strategy)}};
    write_text(paths.state_file(), st.dump() + '\n');

    result.steps.push_back(std::move(step));
    result.reports.push_back(std::move(report));
  }
  result.complete = completed_steps(paths.root) == num_steps;
  return result;
}

}  // namespace cvlp::train
