// Python module: configs and reports cross the boundary as JSON text, arrays as numpy.
#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include "diclet/commands.hpp"
#include "diclet/error.hpp"
#include "diclet/evaluation.hpp"
#include "diclet/op_edm.hpp"
#include "diclet/text_prior.hpp"
#include "diclet/training.hpp"

namespace py = pybind11;
namespace fs = std::filesystem;
using namespace diclet;

namespace {

using FloatArray = py::array_t<float, py::array::c_style | py::array::forcecast>;
using DoubleArray = py::array_t<double, py::array::c_style | py::array::forcecast>;

torch::Tensor to_tensor(const DoubleArray& a) {
  std::vector<int64_t> shape(a.shape(), a.shape() + a.ndim());
  return torch::from_blob(const_cast<double*>(a.data()), shape, torch::kDouble).clone();
}

DoubleArray to_array(const torch::Tensor& t) {
  auto c = t.detach().to(torch::kDouble).contiguous();
  DoubleArray out(std::vector<py::ssize_t>(c.sizes().begin(), c.sizes().end()));
  std::memcpy(out.mutable_data(), c.data_ptr<double>(), sizeof(double) * static_cast<std::size_t>(c.numel()));
  return out;
}

MelSpectrum to_mel(const FloatArray& a) {
  if (a.ndim() != 2) throw Error("mel must be a (frames, bands) array");
  MelSpectrum mel(static_cast<std::uint32_t>(a.shape(0)), static_cast<std::uint32_t>(a.shape(1)));
  std::copy(a.data(), a.data() + a.size(), mel.values.begin());
  return mel;
}

FloatArray from_mel(const MelSpectrum& mel) {
  FloatArray out({static_cast<py::ssize_t>(mel.frames), static_cast<py::ssize_t>(mel.bands)});
  std::copy(mel.values.begin(), mel.values.end(), out.mutable_data());
  return out;
}

template <typename Options>
void fill_common(Options& o, const std::optional<fs::path>& config, const fs::path& out,
                 std::optional<std::uint64_t> seed) {
  o.config = config;
  o.out = out;
  o.seed = seed;
}

/// A loaded checkpoint.
class Checkpoint {
 public:
  explicit Checkpoint(const fs::path& path) : state_(load_checkpoint(path)) {}

  int64_t step() const { return state_.step; }
  std::string config_json() const { return json(state_.model->config()).dump(); }

  FloatArray synthesize_mel(const std::vector<int64_t>& tokens, int64_t speaker, const FloatArray& reference,
                            int steps, std::uint64_t seed, double temperature) {
    auto ref = to_mel(reference);
    MelSpectrum mel;
    {
      py::gil_scoped_release release;
      mel = synthesize(state_, tokens, speaker, ref, steps, seed, temperature);
    }
    return from_mel(mel);
  }

  DoubleArray embed(const FloatArray& reference) {
    auto ref = to_mel(reference);
    torch::Tensor e;
    {
      py::gil_scoped_release release;
      torch::NoGradGuard guard;
      state_.model->eval();
      e = state_.model->embed_reference(ref).reshape({-1});
    }
    return to_array(e);
  }

 private:
  TrainState state_;
};

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "Diffusion cross-lingual emotion transfer: corpus, model and analysis bindings";
  py::register_exception<Error>(m, "DicletError", PyExc_RuntimeError);

  m.def("read_mel", [](const fs::path& p) { return from_mel(read_mel(p)); }, py::arg("path"));
  m.def("write_mel", [](const FloatArray& a, const fs::path& p) { write_mel(to_mel(a), p); },
        py::arg("mel"), py::arg("path"));

  m.def("generate_corpus_json",
        [](const std::string& config, const fs::path& out) {
          auto cfg = json::parse(config).get<GenConfig>();
          py::gil_scoped_release release;
          auto gen = generate_corpus(cfg, out);
          return json{{"manifest", gen.manifest.string()},
                      {"utterances", gen.corpus.utterances.size()},
                      {"signatures", gen.signatures}}
              .dump();
        },
        py::arg("config"), py::arg("out_dir"));

  m.def("length_regulate",
        [](const DoubleArray& rows, const std::vector<int64_t>& durations) {
          return to_array(length_regulate(to_tensor(rows), durations));
        },
        py::arg("rows"), py::arg("durations"));

  m.def("orthogonal_projection_loss",
        [](const DoubleArray& emb, const std::vector<int64_t>& labels) {
          torch::NoGradGuard guard;
          return orthogonal_projection_loss(to_tensor(emb), torch::tensor(labels, torch::kLong)).item<double>();
        },
        py::arg("embeddings"), py::arg("labels"));

  m.def("linear_probe",
        [](const DoubleArray& x, const std::vector<int>& labels, std::uint64_t seed) {
          auto t = to_tensor(x).to(torch::kFloat);
          py::gil_scoped_release release;
          return linear_probe(t, labels, seed);
        },
        py::arg("embeddings"), py::arg("labels"), py::arg("seed") = 0);

  m.def("schedule",
        [](double t, double beta0, double beta1) {
          DiffusionSchedule s(beta0, beta1);
          return py::dict(py::arg("beta") = s.beta(t), py::arg("cumulative") = s.cumulative(t),
                          py::arg("variance") = s.lambda(t));
        },
        py::arg("t"), py::arg("beta0") = 0.05, py::arg("beta1") = 20.0);

  m.def("diffusion_oracle_json",
        [](int paths, int sampler_runs, std::uint64_t seed) {
          DiffusionOracleOptions o;
          o.paths = paths;
          o.sampler_runs = sampler_runs;
          o.seed = seed;
          py::gil_scoped_release release;
          return diffusion_oracle_report(DiffusionSchedule{}, o).dump();
        },
        py::arg("paths") = 100000, py::arg("sampler_runs") = 10000, py::arg("seed") = 11);

  m.def("gen_data",
        [](const fs::path& out, std::optional<fs::path> config, std::optional<std::uint64_t> seed) {
          GenDataOptions o;
          fill_common(o, config, out, seed);
          py::gil_scoped_release release;
          return cmd_gen_data(o);
        },
        py::arg("out"), py::arg("config") = py::none(), py::arg("seed") = py::none());

  m.def("train",
        [](const fs::path& corpus, const fs::path& out, std::optional<fs::path> config,
           std::optional<std::uint64_t> seed, std::optional<int> steps, std::optional<int> batch_size,
           std::optional<fs::path> resume, std::vector<std::string> ablations) {
          TrainOptions o;
          fill_common(o, config, out, seed);
          o.corpus = corpus;
          o.steps = steps;
          o.batch_size = batch_size;
          o.resume = resume;
          o.ablations = std::move(ablations);
          py::gil_scoped_release release;
          return cmd_train(o);
        },
        py::arg("corpus"), py::arg("out"), py::arg("config") = py::none(), py::arg("seed") = py::none(),
        py::arg("steps") = py::none(), py::arg("batch_size") = py::none(), py::arg("resume") = py::none(),
        py::arg("ablations") = std::vector<std::string>{});

  m.def("synth",
        [](const fs::path& checkpoint, const std::vector<int64_t>& tokens, int64_t speaker,
           const fs::path& ref_mel, const fs::path& out, std::optional<fs::path> config,
           std::optional<std::uint64_t> seed, std::optional<int> steps) {
          SynthOptions o;
          fill_common(o, config, out, seed);
          o.checkpoint = checkpoint;
          o.tokens = tokens;
          o.speaker = speaker;
          o.ref_mel = ref_mel;
          o.steps = steps;
          py::gil_scoped_release release;
          return cmd_synth(o);
        },
        py::arg("checkpoint"), py::arg("tokens"), py::arg("speaker"), py::arg("ref_mel"), py::arg("out"),
        py::arg("config") = py::none(), py::arg("seed") = py::none(), py::arg("steps") = py::none());

  m.def("evaluate",
        [](const fs::path& checkpoint, const fs::path& corpus, const fs::path& out,
           std::optional<fs::path> config, std::optional<std::uint64_t> seed, std::optional<int> trials) {
          EvalOptions o;
          fill_common(o, config, out, seed);
          o.checkpoint = checkpoint;
          o.corpus = corpus;
          o.trials = trials;
          py::gil_scoped_release release;
          return cmd_eval(o);
        },
        py::arg("checkpoint"), py::arg("corpus"), py::arg("out"), py::arg("config") = py::none(),
        py::arg("seed") = py::none(), py::arg("trials") = py::none());

  py::class_<Checkpoint>(m, "Checkpoint")
      .def(py::init<const fs::path&>(), py::arg("path"))
      .def_property_readonly("step", &Checkpoint::step)
      .def("config_json", &Checkpoint::config_json)
      .def("synthesize", &Checkpoint::synthesize_mel, py::arg("tokens"), py::arg("speaker"),
           py::arg("reference"), py::arg("steps") = 50, py::arg("seed") = 11, py::arg("temperature") = 1.0)
      .def("embed", &Checkpoint::embed, py::arg("reference"));
}
