#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "onsetnet/checkpoint.hpp"
#include "onsetnet/dataset.hpp"
#include "onsetnet/evaluation.hpp"
#include "onsetnet/gradcheck_suite.hpp"
#include "onsetnet/ops.hpp"
#include "onsetnet/runconfig.hpp"
#include "onsetnet/synth.hpp"
#include "onsetnet/training.hpp"

namespace py = pybind11;
using namespace onsetnet;

namespace {

Tensor<double> tensor_from_array(const py::array_t<double, py::array::c_style | py::array::forcecast>& arr) {
    std::vector<std::int64_t> extents;
    for (py::ssize_t d = 0; d < arr.ndim(); ++d) extents.push_back(arr.shape(d));
    Tensor<double> out{Shape(extents)};
    std::copy(arr.data(), arr.data() + out.size(), out.data());
    return out;
}

py::array_t<double> array_from_tensor(const Tensor<double>& t) {
    std::vector<py::ssize_t> extents;
    for (std::int64_t a = 0; a < t.rank(); ++a) extents.push_back(t.extent(static_cast<std::size_t>(a)));
    py::array_t<double> out(extents);
    std::copy(t.data(), t.data() + t.size(), out.mutable_data());
    return out;
}

RunConfig config_from_dict(const py::dict& overrides) {
    RunConfig config;
    for (const auto& item : overrides) {
        const std::string key = py::cast<std::string>(item.first);
        const std::string value = py::cast<std::string>(py::str(item.second));
        set_key(config, key, value);
    }
    validate_run_config(config);
    return config;
}

py::dict prf_dict(const Prf& p) {
    py::dict out;
    out["precision"] = p.precision;
    out["recall"] = p.recall;
    out["f"] = p.f;
    return out;
}

py::dict report_dict(const EvalReport& report) {
    py::dict out;
    out["method"] = report.method;
    out["tolerance_sec"] = report.tolerance_sec;
    out["tp"] = report.tp;
    out["fp"] = report.fp;
    out["fn"] = report.fn;
    out["micro"] = prf_dict(report.micro);
    out["macro"] = prf_dict(report.macro);
    py::list videos;
    for (const auto& v : report.videos) {
        py::dict row;
        row["video_id"] = v.video_id;
        row["tp"] = v.tp;
        row["fp"] = v.fp;
        row["fn"] = v.fn;
        row["scores"] = prf_dict(v.scores);
        videos.append(row);
    }
    out["videos"] = videos;
    return out;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
    m.doc() = "multi-stream 3D CNN onset detection: dataset synthesis, training, decoding, scoring";

    py::register_exception<ConfigError>(m, "ConfigError", PyExc_ValueError);
    py::register_exception<DataError>(m, "DataError", PyExc_ValueError);
    py::register_exception<NumericError>(m, "NumericError", PyExc_ArithmeticError);
    py::register_exception<IoError>(m, "IoError", PyExc_OSError);

    py::class_<Dataset>(m, "Dataset")
        .def_property_readonly("subject_ids",
                               [](const Dataset& ds) {
                                   std::vector<std::string> ids;
                                   for (const auto& s : ds.subjects) ids.push_back(s.id);
                                   return ids;
                               })
        .def_property_readonly("video_ids",
                               [](const Dataset& ds) {
                                   std::vector<std::string> ids;
                                   for (const auto& v : ds.videos) ids.push_back(v.video_id);
                                   return ids;
                               })
        .def("onsets", [](const Dataset& ds, const std::string& video_id) { return ds.video(video_id).onsets; })
        .def("fps", [](const Dataset& ds, const std::string& video_id) { return ds.video(video_id).fps; })
        .def("duration_frames",
             [](const Dataset& ds, const std::string& video_id) { return ds.video(video_id).duration_frames; })
        .def("subject_of",
             [](const Dataset& ds, const std::string& video_id) { return ds.video(video_id).subject_id; });

    m.def("default_config", []() {
        py::dict out;
        for (const auto& [key, value] : run_config_items(RunConfig{})) out[py::str(key)] = value;
        return out;
    });

    m.def(
        "generate_synthetic",
        [](const std::string& out_dir, std::uint64_t seed, const py::dict& config) {
            RunConfig rc = config_from_dict(config);
            return generate_synthetic(rc.synth, seed, out_dir);
        },
        py::arg("out_dir"), py::arg("seed") = 0, py::arg("config") = py::dict(),
        "Render a synthetic dataset; config takes synth.* keys. Returns the manifest path.");

    m.def("load_dataset", &load_annotations, py::arg("manifest_path"));

    m.def(
        "make_splits",
        [](const std::vector<std::string>& subject_ids) {
            py::list out;
            for (const auto& plan : make_splits(subject_ids)) {
                py::dict row;
                row["split_id"] = plan.split_id;
                row["test"] = plan.test_subject;
                row["validation"] = plan.validation_subject;
                row["train"] = plan.train_subjects;
                out.append(row);
            }
            return out;
        },
        py::arg("subject_ids"));

    m.def("decode_onsets", &decode_onsets, py::arg("frame_probs"), py::arg("fps"), py::arg("threshold") = 0.5,
          py::arg("nms_radius") = 2);

    m.def(
        "match_onsets",
        [](const std::vector<double>& pred, const std::vector<double>& truth, double tolerance_sec) {
            const MatchResult r = match_onsets(pred, truth, tolerance_sec);
            const Prf p = prf(r.tp, r.fp, r.fn);
            py::dict out;
            out["tp"] = r.tp;
            out["fp"] = r.fp;
            out["fn"] = r.fn;
            out["precision"] = p.precision;
            out["recall"] = p.recall;
            out["f"] = p.f;
            return out;
        },
        py::arg("pred"), py::arg("truth"), py::arg("tolerance_sec") = 0.05);

    m.def("informed_random_baseline", &informed_random_baseline, py::arg("truth"), py::arg("duration_sec"),
          py::arg("trials"), py::arg("seed"), py::arg("tolerance_sec") = 0.05);

    m.def(
        "train",
        [](const std::string& manifest_path, std::int64_t split_id, const std::string& out_dir,
           const py::dict& config) {
            const RunConfig rc = config_from_dict(config);
            const Dataset dataset = load_annotations(manifest_path);
            std::vector<std::string> ids;
            for (const auto& s : dataset.subjects) ids.push_back(s.id);
            const auto plans = make_splits(ids);
            if (split_id < 0 || split_id >= static_cast<std::int64_t>(plans.size()))
                throw ConfigError("train: split_id out of range");
            TrainRunConfig run = train_run_from(rc);
            run.checkpoint_dir = out_dir;
            FrameStore store(dataset);
            const FitResult result = fit(store, plans[static_cast<std::size_t>(split_id)], rc.model, run);
            py::dict out;
            py::list history;
            for (const auto& r : result.history) {
                py::dict row;
                row["epoch"] = r.epoch;
                row["train_loss"] = r.train_loss;
                row["val_loss"] = r.val_loss;
                row["val_precision"] = r.val_precision;
                row["val_recall"] = r.val_recall;
                row["val_f"] = r.val_f;
                history.append(row);
            }
            out["history"] = history;
            out["best_epoch"] = result.best_epoch;
            out["best_val_f"] = result.best_val_f;
            out["best_path"] = result.best_path;
            out["history_path"] = result.history_path;
            return out;
        },
        py::arg("manifest_path"), py::arg("split_id"), py::arg("out_dir"), py::arg("config") = py::dict(),
        "Fit one leave-one-subject-out split; config takes the flat run keys.");

    m.def(
        "evaluate",
        [](const std::string& checkpoint_path, const std::string& manifest_path, const std::string& subject,
           double threshold, std::int64_t nms_radius, double tolerance_sec) {
            LoadedCheckpoint loaded = load_checkpoint(checkpoint_path);
            const Dataset dataset = load_annotations(manifest_path);
            FrameStore store(dataset);
            const EvalReport report =
                evaluate_model(loaded.model, store, subject, DecodeParams{threshold, nms_radius}, tolerance_sec,
                               "cnn");
            return report_dict(report);
        },
        py::arg("checkpoint_path"), py::arg("manifest_path"), py::arg("subject"), py::arg("threshold") = 0.5,
        py::arg("nms_radius") = 2, py::arg("tolerance_sec") = 0.05);

    m.def(
        "onset_probability_curve",
        [](const std::string& checkpoint_path, const std::string& manifest_path, const std::string& video_id) {
            LoadedCheckpoint loaded = load_checkpoint(checkpoint_path);
            const Dataset dataset = load_annotations(manifest_path);
            FrameStore store(dataset);
            std::size_t index = dataset.videos.size();
            for (std::size_t i = 0; i < dataset.videos.size(); ++i)
                if (dataset.videos[i].video_id == video_id) index = i;
            if (index == dataset.videos.size()) throw DataError("dataset: unknown video '" + video_id + "'");
            return onset_probability_curve(loaded.model, store, index);
        },
        py::arg("checkpoint_path"), py::arg("manifest_path"), py::arg("video_id"));

    m.def(
        "gradcheck",
        [](std::uint64_t seed) {
            py::list out;
            for (const auto& c : run_gradcheck_suite(seed)) {
                py::dict row;
                row["op"] = c.op;
                row["max_rel_error"] = c.max_rel_error;
                row["threshold"] = c.threshold;
                row["pass"] = c.pass;
                out.append(row);
            }
            return out;
        },
        py::arg("seed") = 0);

    m.def(
        "conv3d",
        [](const py::array_t<double, py::array::c_style | py::array::forcecast>& input,
           const py::array_t<double, py::array::c_style | py::array::forcecast>& weights, std::int64_t pad_h,
           std::int64_t pad_w) {
            const Tensor<double> in = tensor_from_array(input);
            const Tensor<double> w = tensor_from_array(weights);
            if (w.rank() != 5) throw NumericError("conv3d: weights must be rank 5");
            ConvSpec spec{w.extent(0), w.extent(2), w.extent(3), w.extent(4), pad_h, pad_w};
            return array_from_tensor(conv3d_forward(in, w, spec));
        },
        py::arg("input"), py::arg("weights"), py::arg("pad_h") = 0, py::arg("pad_w") = 0,
        "Valid temporal convolution of [N,C,T,H,W] by [F,C,kt,kh,kw] with spatial zero padding.");

    m.def(
        "softmax",
        [](const py::array_t<double, py::array::c_style | py::array::forcecast>& logits) {
            return array_from_tensor(softmax_rows(tensor_from_array(logits)));
        },
        py::arg("logits"));
}
