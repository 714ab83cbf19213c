#include "onsetnet/evaluation.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>

#include "onsetnet/rng.hpp"

namespace onsetnet {

namespace {

void require_sorted(const std::vector<double>& times, const char* which) {
    for (std::size_t i = 1; i < times.size(); ++i) {
        if (times[i] < times[i - 1]) {
            throw NumericError(std::string("match: ") + which + " times are not sorted");
        }
    }
}

std::string pct(double fraction) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.1f", fraction * 100.0);
    return buf;
}

struct ReferenceRow {
    const char* method;
    const char* precision;
    const char* recall;
    const char* f;
};

// Published 50 ms-tolerance scores quoted for comparison only.
constexpr ReferenceRow kReferenceRows[] = {
    {"informed random", "27.4", "19.6", "23.5"},
    {"SuperFlux", "82.8", "81.3", "82.1"},
    {"audio CNN", "94.3", "92.1", "93.2"},
    {"visual CNN", "26.3", "25.0", "25.7"},
};

constexpr const char* kReferenceLabel = "reference (paper)";

}  // namespace

Prf prf(std::int64_t tp, std::int64_t fp, std::int64_t fn) {
    if (tp < 0 || fp < 0 || fn < 0) {
        throw NumericError("prf: counts must be non-negative");
    }
    Prf out;
    out.precision = (tp + fp) > 0 ? static_cast<double>(tp) / static_cast<double>(tp + fp) : 0.0;
    out.recall = (tp + fn) > 0 ? static_cast<double>(tp) / static_cast<double>(tp + fn) : 0.0;
    const double pr = out.precision + out.recall;
    out.f = pr > 0 ? 2.0 * out.precision * out.recall / pr : 0.0;
    return out;
}

MatchResult match_onsets(const std::vector<double>& pred, const std::vector<double>& truth,
                         double tolerance_sec) {
    if (tolerance_sec < 0) {
        throw NumericError("match: tolerance must be >= 0");
    }
    require_sorted(pred, "prediction");
    require_sorted(truth, "truth");
    MatchResult out;
    std::size_t i = 0;
    std::size_t j = 0;
    while (i < pred.size() && j < truth.size()) {
        const double d = pred[i] - truth[j];
        if (std::abs(d) <= tolerance_sec) {
            out.pairs.emplace_back(i, j);
            ++i;
            ++j;
        } else if (d < 0) {
            ++i;  // this prediction precedes every remaining truth's window
        } else {
            ++j;  // this truth can no longer be matched
        }
    }
    out.tp = static_cast<std::int64_t>(out.pairs.size());
    out.fp = static_cast<std::int64_t>(pred.size()) - out.tp;
    out.fn = static_cast<std::int64_t>(truth.size()) - out.tp;
    return out;
}

std::vector<double> decode_onsets(const std::vector<double>& frame_probs, double fps, double threshold,
                                  std::int64_t nms_radius) {
    if (!(fps > 0)) {
        throw NumericError("decode: fps must be positive");
    }
    if (nms_radius < 0) {
        throw NumericError("decode: nms_radius must be >= 0");
    }
    if (!std::isfinite(threshold)) {
        throw NumericError("decode: threshold must be finite");
    }
    const std::int64_t n = static_cast<std::int64_t>(frame_probs.size());
    for (std::int64_t k = 0; k < n; ++k) {
        const double p = frame_probs[static_cast<std::size_t>(k)];
        if (!(p >= 0.0 && p <= 1.0)) {
            throw NumericError("decode: probability at frame " + std::to_string(k) + " outside [0, 1]");
        }
    }
    std::vector<double> times;
    for (std::int64_t k = 0; k < n; ++k) {
        const double p = frame_probs[static_cast<std::size_t>(k)];
        if (p < threshold) {
            continue;
        }
        bool keep = true;
        const std::int64_t lo = std::max<std::int64_t>(0, k - nms_radius);
        const std::int64_t hi = std::min<std::int64_t>(n - 1, k + nms_radius);
        for (std::int64_t j = lo; j <= hi && keep; ++j) {
            const double q = frame_probs[static_cast<std::size_t>(j)];
            if ((j < k && q >= p) || (j > k && q > p)) {
                keep = false;
            }
        }
        if (keep) {
            times.push_back((static_cast<double>(k) + 0.5) / fps);
        }
    }
    return times;
}

double informed_random_baseline(const std::vector<double>& truth, double duration_sec, std::int64_t trials,
                                std::uint64_t seed, double tolerance_sec) {
    if (trials < 1) {
        throw NumericError("baseline: trials must be >= 1");
    }
    if (!(duration_sec > 0)) {
        throw NumericError("baseline: duration must be positive");
    }
    require_sorted(truth, "truth");
    Rng rng = Rng(seed).substream("informed_random");
    double f_sum = 0;
    std::vector<double> draw(truth.size());
    for (std::int64_t t = 0; t < trials; ++t) {
        for (double& v : draw) {
            v = rng.uniform(0.0, duration_sec);
        }
        std::sort(draw.begin(), draw.end());
        const MatchResult m = match_onsets(draw, truth, tolerance_sec);
        f_sum += prf(m.tp, m.fp, m.fn).f;
    }
    return f_sum / static_cast<double>(trials);
}

std::vector<double> onset_probability_curve(Model<float>& model, FrameStore& store, std::size_t video_index,
                                            std::int64_t forward_batch) {
    if (forward_batch < 1) {
        throw NumericError("evaluate: forward_batch must be >= 1");
    }
    const Dataset& ds = store.dataset();
    if (video_index >= ds.videos.size()) {
        throw DataError("evaluate: video index out of range");
    }
    const VideoRecord& video = ds.videos[video_index];
    std::vector<double> curve(static_cast<std::size_t>(video.duration_frames), 0.0);

    std::vector<std::int64_t> refs;
    for (std::int64_t ref = window_frames_before; ref + window_frames_after < video.duration_frames; ++ref) {
        refs.push_back(ref);
    }
    Rng unused(0);
    for (std::size_t begin = 0; begin < refs.size(); begin += static_cast<std::size_t>(forward_batch)) {
        const std::size_t end = std::min(refs.size(), begin + static_cast<std::size_t>(forward_batch));
        std::vector<BalancedSampler::Draw> draws;
        draws.reserve(end - begin);
        for (std::size_t i = begin; i < end; ++i) {
            BalancedSampler::Draw d;
            d.window = SampleWindow{video_index, refs[i], WindowLabel::non_onset};
            draws.push_back(d);
        }
        const std::vector<Tensor<float>> batch = materialize_batch(
            store, draws, model.config.roi_names, model.config.roi_height, model.config.roi_width);
        const ForwardResult<float> out = model_forward(model, batch, Mode::eval, unused);
        for (std::size_t i = begin; i < end; ++i) {
            curve[static_cast<std::size_t>(refs[i])] =
                static_cast<double>(out.probs[static_cast<std::int64_t>(i - begin) * 2 + 1]);
        }
    }
    return curve;
}

namespace {

EvalReport finish_report(EvalReport report) {
    report.micro = prf(report.tp, report.fp, report.fn);
    if (!report.videos.empty()) {
        for (const VideoScore& v : report.videos) {
            report.macro.precision += v.scores.precision;
            report.macro.recall += v.scores.recall;
            report.macro.f += v.scores.f;
        }
        const double n = static_cast<double>(report.videos.size());
        report.macro.precision /= n;
        report.macro.recall /= n;
        report.macro.f /= n;
    }
    return report;
}

VideoScore score_video(const VideoRecord& video, const std::vector<double>& pred_times, double tolerance_sec) {
    const MatchResult m = match_onsets(pred_times, video.onsets, tolerance_sec);
    VideoScore score;
    score.video_id = video.video_id;
    score.tp = m.tp;
    score.fp = m.fp;
    score.fn = m.fn;
    score.scores = prf(m.tp, m.fp, m.fn);
    return score;
}

}  // namespace

EvalReport evaluate_model(Model<float>& model, FrameStore& store, const std::string& subject_id,
                          const DecodeParams& decode, double tolerance_sec, const std::string& method) {
    const Dataset& ds = store.dataset();
    const SubjectRecord& subject = ds.subject(subject_id);
    if (subject.video_indices.empty()) {
        throw DataError("evaluate: subject '" + subject_id + "' has no videos");
    }
    EvalReport report;
    report.method = method;
    report.tolerance_sec = tolerance_sec;
    for (const std::size_t vi : subject.video_indices) {
        const VideoRecord& video = ds.videos[vi];
        const std::vector<double> curve = onset_probability_curve(model, store, vi);
        const std::vector<double> pred = decode_onsets(curve, video.fps, decode.threshold, decode.nms_radius);
        const VideoScore score = score_video(video, pred, tolerance_sec);
        report.tp += score.tp;
        report.fp += score.fp;
        report.fn += score.fn;
        report.videos.push_back(score);
    }
    return finish_report(std::move(report));
}

EvalReport score_predictions(const Dataset& dataset, const std::string& subject_id,
                             const std::map<std::string, std::vector<double>>& predictions,
                             double tolerance_sec, const std::string& method) {
    const SubjectRecord& subject = dataset.subject(subject_id);
    if (subject.video_indices.empty()) {
        throw DataError("evaluate: subject '" + subject_id + "' has no videos");
    }
    EvalReport report;
    report.method = method;
    report.tolerance_sec = tolerance_sec;
    static const std::vector<double> kNone;
    for (const std::size_t vi : subject.video_indices) {
        const VideoRecord& video = dataset.videos[vi];
        const auto it = predictions.find(video.video_id);
        const VideoScore score = score_video(video, it != predictions.end() ? it->second : kNone, tolerance_sec);
        report.tp += score.tp;
        report.fp += score.fp;
        report.fn += score.fn;
        report.videos.push_back(score);
    }
    return finish_report(std::move(report));
}

void write_predictions_csv(const std::string& path, const std::vector<OnsetPrediction>& predictions) {
    std::ofstream out(path, std::ios::binary);
    if (!out) {
        throw IoError("predictions: cannot open " + path + " for writing");
    }
    out << "video_id,onset_sec\n";
    for (const OnsetPrediction& p : predictions) {
        require_sorted(p.times, "prediction");
        for (const double t : p.times) {
            char buf[64];
            std::snprintf(buf, sizeof(buf), "%.9g", t);
            out << p.video_id << ',' << buf << '\n';
        }
    }
    if (!out.good()) {
        throw IoError("predictions: failed writing " + path);
    }
}

std::map<std::string, std::vector<double>> read_predictions_csv(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw DataError("predictions: cannot open " + path);
    }
    std::string line;
    if (!std::getline(in, line) || (line != "video_id,onset_sec" && line != "video_id,onset_sec\r")) {
        throw DataError("predictions: " + path + ":1: expected header 'video_id,onset_sec'");
    }
    std::map<std::string, std::vector<double>> out;
    std::size_t line_no = 1;
    while (std::getline(in, line)) {
        ++line_no;
        if (!line.empty() && line.back() == '\r') {
            line.pop_back();
        }
        const std::size_t comma = line.find(',');
        if (comma == std::string::npos) {
            throw DataError("predictions: " + path + ":" + std::to_string(line_no) + ": expected 2 fields");
        }
        const std::string id = line.substr(0, comma);
        const std::string value = line.substr(comma + 1);
        char* end = nullptr;
        const double t = std::strtod(value.c_str(), &end);
        if (end != value.c_str() + value.size() || !std::isfinite(t)) {
            throw DataError("predictions: " + path + ":" + std::to_string(line_no) + ": bad number '" +
                            value + "'");
        }
        std::vector<double>& times = out[id];
        if (!times.empty() && t < times.back()) {
            throw DataError("predictions: " + path + ":" + std::to_string(line_no) + ": times for video '" +
                            id + "' are not sorted");
        }
        times.push_back(t);
    }
    return out;
}

namespace {

void append_rows(std::string& table, std::string& csv, const EvalReport& report) {
    const auto row = [&](const std::string& video, std::int64_t tp, std::int64_t fp, std::int64_t fn,
                         const Prf& s) {
        const std::string counts =
            std::to_string(tp) + "," + std::to_string(fp) + "," + std::to_string(fn);
        table += report.method + " | " + video + " | " + counts + " | " + pct(s.precision) + " | " +
                 pct(s.recall) + " | " + pct(s.f) + "\n";
        csv += report.method + "," + video + "," + counts + "," + pct(s.precision) + "," + pct(s.recall) +
               "," + pct(s.f) + "\n";
    };
    for (const VideoScore& v : report.videos) {
        row(v.video_id, v.tp, v.fp, v.fn, v.scores);
    }
    row("all", report.tp, report.fp, report.fn, report.micro);
}

void append_reference(std::string& table, std::string& csv) {
    for (const ReferenceRow& r : kReferenceRows) {
        table += std::string(r.method) + " | " + kReferenceLabel + " | -,-,- | " + r.precision + " | " +
                 r.recall + " | " + r.f + "\n";
        csv += std::string(r.method) + "," + kReferenceLabel + ",,,," + r.precision + "," + r.recall + "," +
               r.f + "\n";
    }
}

std::pair<std::string, std::string> render_both(const std::vector<EvalReport>& reports,
                                                bool include_reference) {
    std::string table = "method | video | tp,fp,fn | precision | recall | f\n";
    std::string csv = "method,video_id,tp,fp,fn,precision,recall,f\n";
    for (const EvalReport& r : reports) {
        append_rows(table, csv, r);
    }
    if (include_reference) {
        append_reference(table, csv);
    }
    return {table, csv};
}

}  // namespace

std::string render_report_table(const std::vector<EvalReport>& reports, bool include_reference) {
    return render_both(reports, include_reference).first;
}

std::string render_report_csv(const std::vector<EvalReport>& reports, bool include_reference) {
    return render_both(reports, include_reference).second;
}

}  // namespace onsetnet
