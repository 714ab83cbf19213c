#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "onsetnet/dataset.hpp"
#include "onsetnet/model.hpp"

namespace onsetnet {

struct OnsetPrediction {
    std::string video_id;
    std::vector<double> times;  // seconds, strictly increasing
};

struct Prf {
    double precision = 0;
    double recall = 0;
    double f = 0;
};

// p = tp/(tp+fp), r = tp/(tp+fn), f = 2pr/(p+r); any 0/0 collapses to 0.
Prf prf(std::int64_t tp, std::int64_t fp, std::int64_t fn);

struct MatchResult {
    std::int64_t tp = 0;
    std::int64_t fp = 0;
    std::int64_t fn = 0;
    std::vector<std::pair<std::size_t, std::size_t>> pairs;  // (pred index, truth index)
};

// One-to-one matching of predictions to ground truth within tolerance_sec,
// by a two-pointer sweep over both sorted lists. For interval matching on a
// line the sweep attains maximum cardinality.
MatchResult match_onsets(const std::vector<double>& pred, const std::vector<double>& truth,
                         double tolerance_sec = 0.05);

// Picks frames above threshold that strictly exceed every earlier frame and
// at least tie every later frame within nms_radius frames, so a plateau
// yields its earliest frame and selections are always > radius apart.
// Onset times are frame centers (k + 0.5) / fps.
std::vector<double> decode_onsets(const std::vector<double>& frame_probs, double fps, double threshold = 0.5,
                                  std::int64_t nms_radius = 2);

// Mean f-score of drawing |truth| onset times uniformly in [0, duration_sec]
// per trial; the baseline knows the onset count but nothing else.
double informed_random_baseline(const std::vector<double>& truth, double duration_sec, std::int64_t trials,
                                std::uint64_t seed, double tolerance_sec = 0.05);

struct VideoScore {
    std::string video_id;
    std::int64_t tp = 0;
    std::int64_t fp = 0;
    std::int64_t fn = 0;
    Prf scores;
};

struct EvalReport {
    std::string method;
    double tolerance_sec = 0.05;
    std::vector<VideoScore> videos;
    std::int64_t tp = 0;
    std::int64_t fp = 0;
    std::int64_t fn = 0;
    Prf micro;  // from the global counts
    Prf macro;  // mean of the per-video scores
};

struct DecodeParams {
    double threshold = 0.5;
    std::int64_t nms_radius = 2;
};

// Onset probability for every frame of one video: eval-mode forward over
// every in-bounds window at zero jitter, indexed by reference frame.
// Boundary frames without a window keep probability 0.
std::vector<double> onset_probability_curve(Model<float>& model, FrameStore& store, std::size_t video_index,
                                            std::int64_t forward_batch = 24);

// Decodes and scores every video of one subject; counts aggregate by
// summation (micro) with per-video rows kept alongside.
EvalReport evaluate_model(Model<float>& model, FrameStore& store, const std::string& subject_id,
                          const DecodeParams& decode, double tolerance_sec, const std::string& method);

// Scores already-decoded predictions (e.g. an external detector's CSV)
// against one subject's ground truth. Videos without an entry count as
// predicting nothing.
EvalReport score_predictions(const Dataset& dataset, const std::string& subject_id,
                             const std::map<std::string, std::vector<double>>& predictions,
                             double tolerance_sec, const std::string& method);

void write_predictions_csv(const std::string& path, const std::vector<OnsetPrediction>& predictions);
std::map<std::string, std::vector<double>> read_predictions_csv(const std::string& path);

// Text table / CSV of the reports; include_reference appends the published
// comparison rows (fixed constants, never recomputed).
std::string render_report_table(const std::vector<EvalReport>& reports, bool include_reference);
std::string render_report_csv(const std::vector<EvalReport>& reports, bool include_reference);

}  // namespace onsetnet
