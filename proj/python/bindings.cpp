// Python bindings: data generation, the dual encoder, losses, replay memory,
// pseudo-text generation, evaluation and whole training runs.

#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include "cvlp/errors.hpp"
#include "cvlp/eval.hpp"
#include "cvlp/experiment.hpp"
#include "cvlp/losses.hpp"
#include "cvlp/memory.hpp"
#include "cvlp/negtext.hpp"
#include "cvlp/ops.hpp"

namespace py = pybind11;
using namespace cvlp;

namespace {

using Array = py::array_t<double, py::array::c_style | py::array::forcecast>;

ad::Tensor to_tensor(const Array& a) {
  if (a.ndim() != 2) throw DimensionError("expected a 2-D array, got " + std::to_string(a.ndim()) + "-D");
  const auto r = static_cast<std::size_t>(a.shape(0)), c = static_cast<std::size_t>(a.shape(1));
  return ad::Tensor::from({r, c}, std::vector<double>(a.data(), a.data() + r * c));
}

Array to_array(const ad::Tensor& t) {
  Array out({t.rows(), t.cols()});
  std::copy(t.data().begin(), t.data().end(), out.mutable_data());
  return out;
}

model::TokenBatch to_batch(const std::vector<std::vector<std::int32_t>>& seqs) {
  model::TokenBatch tb;
  for (const auto& s : seqs) tb.push(s);
  return tb;
}

py::dict contrastive(const Array& scores, double tau, double alpha, std::size_t num_real) {
  const auto s = to_tensor(scores);
  if (num_real > s.cols()) throw DimensionError("num_real exceeds the column count");
  const auto l = loss::contrastive_loss(s, tau, alpha, {num_real, s.cols() - num_real});
  py::dict d;
  d["total"] = l.total.item();
  d["i2t"] = l.i2t.item();
  d["t2i"] = l.t2i.item();
  return d;
}

py::dict distill(const Array& new_scores, const Array& old_scores, double tau, double tau_old, double eta,
                 std::size_t num_real) {
  const auto s = to_tensor(new_scores);
  if (num_real > s.cols()) throw DimensionError("num_real exceeds the column count");
  const auto l = loss::distill_loss(s, to_tensor(old_scores), tau, tau_old, eta, {num_real, s.cols() - num_real});
  py::dict d;
  d["total"] = l.total.item();
  d["i2t"] = l.i2t.item();
  d["t2i"] = l.t2i.item();
  return d;
}

py::dict report_dict(const eval::EvalReport& r) {
  py::dict d;
  d["step"] = r.step;
  d["zero_shot"] = r.zero_shot;
  d["zero_shot_avg"] = r.zero_shot_avg;
  d["recall_ks"] = r.recall.ks;
  d["recall_i2t"] = r.recall.i2t;
  d["recall_t2i"] = r.recall.t2i;
  d["chunk_row"] = r.chunk_row;
  d["bwt"] = r.bwt ? py::cast(*r.bwt) : py::none();
  return d;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "Continual vision-language contrastive pretraining on synthetic streams";

  auto base_value = py::handle(PyExc_ValueError);
  auto base_runtime = py::handle(PyExc_RuntimeError);
  py::register_exception<ConfigError>(m, "ConfigError", base_value);
  py::register_exception<DimensionError>(m, "DimensionError", base_value);
  // Translators run newest first, so the subclass is registered last.
  const auto& contract = py::register_exception<ContractError>(m, "ContractError", base_runtime);
  py::register_exception<OutOfVocabularyError>(m, "OutOfVocabularyError", contract);
  py::register_exception<NumericError>(m, "NumericError", base_runtime);
  py::register_exception<FormatError>(m, "FormatError", base_runtime);

  py::class_<stream::GeneratorSpec>(m, "GeneratorSpec")
      .def(py::init<>())
      .def_readwrite("num_classes", &stream::GeneratorSpec::num_classes)
      .def_readwrite("d_img", &stream::GeneratorSpec::d_img)
      .def_readwrite("vocab_size", &stream::GeneratorSpec::vocab_size)
      .def_readwrite("tokens_per_class", &stream::GeneratorSpec::tokens_per_class)
      .def_readwrite("shared_tokens", &stream::GeneratorSpec::shared_tokens)
      .def_readwrite("shared_fraction", &stream::GeneratorSpec::shared_fraction)
      .def_readwrite("noise_std", &stream::GeneratorSpec::noise_std)
      .def_readwrite("min_len", &stream::GeneratorSpec::min_len)
      .def_readwrite("max_len", &stream::GeneratorSpec::max_len)
      .def_readwrite("seed", &stream::GeneratorSpec::seed)
      .def("validate", &stream::GeneratorSpec::validate);

  py::class_<stream::PairSample>(m, "PairSample")
      .def_readonly("image_feat", &stream::PairSample::image_feat)
      .def_readonly("tokens", &stream::PairSample::tokens)
      .def_readonly("class_id", &stream::PairSample::class_id)
      .def_readonly("sample_id", &stream::PairSample::sample_id)
      .def("__eq__", [](const stream::PairSample& a, const stream::PairSample& b) { return a == b; });

  py::class_<stream::PairChunk>(m, "PairChunk")
      .def_readonly("step_index", &stream::PairChunk::step_index)
      .def_readonly("samples", &stream::PairChunk::samples);

  m.def("generate_dataset", &stream::generate_dataset, py::arg("spec"), py::arg("n"), py::arg("stream") = 0);
  m.def("split_class_incremental",
        [](const std::vector<stream::PairSample>& s, std::int32_t c, std::uint32_t t) {
          return stream::split_class_incremental(s, c, t);
        },
        py::arg("samples"), py::arg("num_classes"), py::arg("num_steps"));
  m.def("split_instance_incremental",
        [](const std::vector<stream::PairSample>& s, std::uint32_t t, std::uint64_t seed) {
          return stream::split_instance_incremental(s, t, seed);
        },
        py::arg("samples"), py::arg("num_steps"), py::arg("seed"));
  m.def("image_matrix", [](const std::vector<stream::PairSample>& s) { return to_array(model::image_matrix(s)); });

  py::class_<model::ModelDims>(m, "ModelDims")
      .def(py::init<>())
      .def_readwrite("d_img", &model::ModelDims::d_img)
      .def_readwrite("d_tok", &model::ModelDims::d_tok)
      .def_readwrite("d_emb", &model::ModelDims::d_emb)
      .def_readwrite("hidden", &model::ModelDims::hidden)
      .def_readwrite("vocab_size", &model::ModelDims::vocab_size)
      .def_readwrite("init_tau", &model::ModelDims::init_tau)
      .def_readwrite("min_tau", &model::ModelDims::min_tau)
      .def_readwrite("max_tau", &model::ModelDims::max_tau);

  py::class_<model::DualEncoder>(m, "DualEncoder")
      .def(py::init<const model::ModelDims&, std::uint64_t>(), py::arg("dims") = model::ModelDims{},
           py::arg("seed") = 0)
      .def_static("load", &model::DualEncoder::load)
      .def("save", &model::DualEncoder::save)
      .def("encode_images", [](const model::DualEncoder& e, const Array& x) { return to_array(e.encode_images(to_tensor(x))); })
      .def("encode_text",
           [](const model::DualEncoder& e, const std::vector<std::vector<std::int32_t>>& seqs) {
             return to_array(e.encode_text(to_batch(seqs)));
           })
      .def("similarity",
           [](const model::DualEncoder& e, const std::vector<stream::PairSample>& s) {
             return to_array(model::similarity(e.encode_images(s), e.encode_text(model::TokenBatch::of(s))));
           })
      .def_property_readonly("tau", &model::DualEncoder::tau)
      .def("parameter_names",
           [](const model::DualEncoder& e) {
             std::vector<std::string> out;
             for (const auto& p : e.parameters()) out.push_back(p.name);
             return out;
           })
      .def("parameter", [](const model::DualEncoder& e, const std::string& n) { return to_array(e.parameter(n)); });

  m.def("prob_i2t", [](const Array& s, double tau) { return to_array(loss::prob_i2t(to_tensor(s), tau)); });
  m.def("prob_t2i", [](const Array& s, double tau) { return to_array(loss::prob_t2i(to_tensor(s), tau)); });
  m.def("contrastive_loss", &contrastive, py::arg("scores"), py::arg("tau"), py::arg("alpha"), py::arg("num_real"));
  m.def("distill_loss", &distill, py::arg("new_scores"), py::arg("old_scores"), py::arg("tau"), py::arg("tau_old"),
        py::arg("eta"), py::arg("num_real"));
  m.def("gen_loss", [](const std::vector<double>& s, double lo, double hi) { return negtext::gen_loss(s, lo, hi); },
        py::arg("scores"), py::arg("s_min"), py::arg("s_max"));

  py::class_<memory::MemoryBuffer>(m, "MemoryBuffer")
      .def(py::init<std::size_t, std::uint64_t>(), py::arg("capacity"), py::arg("seed"))
      .def("offer", &memory::MemoryBuffer::offer)
      .def("offer_all", [](memory::MemoryBuffer& b, const std::vector<stream::PairSample>& s) { b.offer_all(s); })
      .def("sample_batch",
           [](const memory::MemoryBuffer& b, std::size_t n, std::uint64_t seed) {
             std::mt19937_64 rng(seed);
             return b.sample_batch(n, rng);
           },
           py::arg("n"), py::arg("seed"))
      .def_property_readonly("capacity", &memory::MemoryBuffer::capacity)
      .def_property_readonly("seen_count", &memory::MemoryBuffer::seen_count)
      .def_property_readonly("items", &memory::MemoryBuffer::items)
      .def("__len__", &memory::MemoryBuffer::size);

  py::class_<negtext::GenConfig>(m, "GenConfig")
      .def(py::init<>())
      .def_readwrite("s_min", &negtext::GenConfig::s_min)
      .def_readwrite("s_max", &negtext::GenConfig::s_max)
      .def_readwrite("gen_iters", &negtext::GenConfig::gen_iters)
      .def_readwrite("gen_lr", &negtext::GenConfig::gen_lr)
      .def_readwrite("num_pseudo", &negtext::GenConfig::num_pseudo)
      .def_readwrite("anchor_only", &negtext::GenConfig::anchor_only);

  m.def("generate_pseudo_texts",
        [](const model::DualEncoder& e, const std::vector<stream::PairSample>& batch, const negtext::GenConfig& g,
           std::uint64_t seed) {
          const auto frozen = e.copy(false);
          const auto r = negtext::generate_batch(frozen, model::image_matrix(batch),
                                                 frozen.embed_tokens(model::TokenBatch::of(batch)), g, seed);
          py::list texts;
          for (const auto& t : r.texts) {
            py::dict d;
            d["embeddings"] = to_array(t.embeddings);
            d["anchor"] = t.anchor;
            d["partner"] = t.partner;
            d["beta"] = t.beta;
            d["scores"] = t.scores;
            d["init_loss"] = t.init_loss;
            d["final_loss"] = t.final_loss;
            texts.append(d);
          }
          py::dict out;
          out["texts"] = texts;
          out["mean_init_loss"] = r.mean_init_loss;
          out["mean_final_loss"] = r.mean_final_loss;
          return out;
        },
        py::arg("model"), py::arg("batch"), py::arg("config") = negtext::GenConfig{}, py::arg("seed") = 0);

  m.def("zero_shot_accuracy",
        [](const model::DualEncoder& e, const std::vector<stream::PairSample>& s, const stream::GeneratorSpec& spec) {
          return eval::zero_shot_classify(e, s, eval::make_prompts(spec)).accuracy;
        });
  m.def("bwt", &eval::bwt, py::arg("accuracy_matrix"));

  m.def("default_config_ini", [] { return exp::to_ini(exp::ExperimentConfig{}); });
  m.def("normalize_config_ini", [](const std::string& ini) { return exp::to_ini(exp::from_ini(ini)); });
  m.def("train",
        [](const std::string& ini, const std::string& strategy, std::uint64_t seed,
           const std::filesystem::path& out_dir) {
          auto c = exp::from_ini(ini);
          c.out_dir = out_dir;
          exp::TrainRequest req;
          req.strategy = train::parse_strategy(strategy);
          req.seed = seed;
          py::list reports;
          for (const auto& r : exp::cmd_train(c, req).reports) reports.append(report_dict(r));
          return reports;
        },
        py::arg("config_ini"), py::arg("strategy"), py::arg("seed"), py::arg("out_dir"));
}
