#include "syncvsr/analysis.hpp"
#include "syncvsr/checkpoint.hpp"
#include "syncvsr/cli.hpp"
#include "syncvsr/config.hpp"
#include "syncvsr/corpus.hpp"
#include "syncvsr/losses.hpp"
#include "syncvsr/quantizer.hpp"
#include "syncvsr/train.hpp"

#include <pybind11/eigen.h>
#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <sstream>

namespace py = pybind11;
using namespace syncvsr;

namespace {

using Grid = py::array_t<std::uint16_t, py::array::c_style | py::array::forcecast>;

std::span<const std::uint16_t> grid_span(const Grid& g) {
  return {g.data(), static_cast<std::size_t>(g.size())};
}

py::tuple loss_tuple(const LossResult& r) { return py::make_tuple(r.value, r.grad); }

py::dict sample_dict(const Sample& s) {
  py::dict d;
  d["num_frames"] = s.num_frames;
  d["frames"] = s.frames();
  py::array_t<std::uint8_t> wb(static_cast<py::ssize_t>(s.word_boundary.size()), s.word_boundary.data());
  d["word_boundary"] = wb;
  py::array_t<std::uint16_t> grid({static_cast<py::ssize_t>(s.num_frames), static_cast<py::ssize_t>(kTokensPerFrame)},
                                  s.token_grid.data());
  d["token_grid"] = grid;
  d["label"] = std::vector<int>(s.label.begin(), s.label.end());
  return d;
}

RunConfig config_from(const std::string& text) { return parse_run_config(nlohmann::json::parse(text)); }

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "Synthetic visual speech recognition with audio-token synchronization";

  static py::exception<Error> error(m, "Error", PyExc_RuntimeError);
  py::register_exception_translator([](std::exception_ptr p) {
    try {
      if (p) std::rethrow_exception(p);
    } catch (const Error& e) {
      PyErr_SetString(error.ptr(), (std::string(to_string(e.kind())) + ": " + e.what()).c_str());
    }
  });

  // analysis
  m.def("levenshtein", [](const std::vector<int>& a, const std::vector<int>& b) { return levenshtein(a, b); },
        py::arg("a"), py::arg("b"));
  m.def("levenshtein_str", [](const std::string& a, const std::string& b) { return levenshtein(a, b); });
  m.def("wer", [](const std::string& hyp, const std::string& ref) { return wer(split_words(hyp), split_words(ref)); },
        py::arg("hypothesis"), py::arg("reference"));
  m.def("perplexity", &perplexity, py::arg("mean_nll"));
  m.def("mean_attention_distance", py::overload_cast<const Mat&>(&mean_attention_distance), py::arg("attention"));

  // losses
  m.def("word_ce", [](const Mat& logits, int label) { return loss_tuple(word_ce(logits, label)); });
  m.def("ctc_loss", [](const Mat& logits, const std::vector<int>& target) { return loss_tuple(ctc_loss(logits, target)); },
        py::arg("logits"), py::arg("target"));
  m.def("lm_loss", [](const Mat& logits, const std::vector<int>& target) { return loss_tuple(lm_loss(logits, target)); },
        py::arg("logits"), py::arg("target"));
  m.def("sync_loss",
        [](const Mat& logits, const Grid& grid, int pad_id) { return loss_tuple(sync_loss(logits, grid_span(grid), pad_id)); },
        py::arg("logits"), py::arg("grid"), py::arg("pad_id"));
  m.def("masked_sync_loss",
        [](const Mat& logits, const Grid& grid, const std::vector<bool>& mask, int pad_id) {
          return loss_tuple(masked_sync_loss(logits, grid_span(grid), mask, pad_id));
        },
        py::arg("logits"), py::arg("grid"), py::arg("mask"), py::arg("pad_id"));
  m.def("task_loss", &task_loss, py::arg("l_ctc"), py::arg("l_lm"), py::arg("alpha"));
  m.def("total_loss", &total_loss, py::arg("l_task"), py::arg("l_sync"), py::arg("lam"));
  m.def("lr_schedule", &lr_schedule, py::arg("step"), py::arg("warmup_steps"), py::arg("total_steps"), py::arg("peak"));

  // quantizer
  py::class_<Codebook>(m, "Codebook")
      .def_readonly("centroids", &Codebook::centroids)
      .def_readonly("distortion_history", &Codebook::distortion_history)
      .def_readonly("fit_distortion", &Codebook::fit_distortion)
      .def("quantize", [](const Codebook& cb, const Mat& f) { return quantize(cb, f); })
      .def("save", [](const Codebook& cb, const std::string& path) { save_codebook(cb, path); });
  m.def("fit_codebook", &fit_codebook, py::arg("features"), py::arg("V"), py::arg("iters"), py::arg("seed"));
  m.def("load_codebook", [](const std::string& path) { return load_codebook(path); });
  m.def("align_tokens",
        [](const std::vector<int>& tokens, int num_frames, int pad_id) {
          const auto a = align_tokens(tokens, num_frames, pad_id);
          py::array_t<std::uint16_t> grid({static_cast<py::ssize_t>(a.num_frames), static_cast<py::ssize_t>(kTokensPerFrame)},
                                          a.grid.data());
          return py::make_tuple(grid, a.padded, a.truncated);
        },
        py::arg("tokens"), py::arg("num_frames"), py::arg("pad_id"));

  // corpus
  py::class_<World>(m, "World")
      .def_readonly("lexicon", &World::lexicon)
      .def_readonly("phoneme_to_viseme", &World::phoneme_to_viseme)
      .def_readonly("num_graphemes", &World::num_graphemes)
      .def("fingerprint", &World::fingerprint)
      .def("visemes", &World::visemes)
      .def("homophene_pairs", [](const World& w) {
        std::vector<py::tuple> out;
        for (const auto& p : homophene_pairs(w)) out.push_back(py::make_tuple(p.word_a, p.word_b, p.edit_distance));
        return out;
      });
  m.def("build_world", [](const std::string& config_json, std::uint64_t seed) {
    return build_world(config_from(config_json).world, seed);
  }, py::arg("config_json"), py::arg("seed"));
  m.def("render_sample",
        [](const World& w, const std::vector<int>& words, std::optional<std::size_t> target, std::uint64_t seed) {
          return sample_dict(render_sample(w, {words, target}, seed));
        },
        py::arg("world"), py::arg("words"), py::arg("target"), py::arg("seed"));
  m.def("load_split", [](const std::string& dir) {
    const auto ds = load_dataset(dir);
    py::list samples;
    for (const auto& s : ds.samples) samples.append(sample_dict(s));
    return py::make_tuple(ds.manifest_hash, samples);
  });

  // train
  m.def("train",
        [](const std::string& config_json, const std::string& data_dir, const std::string& out_dir) {
          const auto c = config_from(config_json);
          const World world = load_world(std::filesystem::path(data_dir) / "world.json");
          const std::string fp = world.fingerprint();
          const auto tr = load_dataset(std::filesystem::path(data_dir) / "train", &fp);
          const auto ev = load_dataset(std::filesystem::path(data_dir) / "eval", &fp);
          TrainOutputs outputs{out_dir, std::filesystem::path(out_dir) / "metrics.jsonl"};
          py::gil_scoped_release release;
          const auto r = train(c.train, c.model, world, tr, &ev, &outputs);
          return std::make_pair(r.final_checkpoint.string(), r.parameter_hash);
        },
        py::arg("config_json"), py::arg("data_dir"), py::arg("out_dir"));
  m.def("evaluate", [](const std::string& checkpoint, const std::string& split_dir) {
    const auto ck = load_checkpoint(checkpoint);
    const auto ds = load_dataset(split_dir);
    return to_json(evaluate(ck.model, ds, nullptr)).dump();
  });

  m.def("run_cli", [](const std::vector<std::string>& args) {
    std::vector<const char*> argv{"syncvsr"};
    for (const auto& a : args) argv.push_back(a.c_str());
    std::ostringstream out, err;
    const int code = run_cli(static_cast<int>(argv.size()), argv.data(), out, err);
    return py::make_tuple(code, out.str(), err.str());
  });
}
