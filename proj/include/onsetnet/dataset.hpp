#pragma once

#include <array>
#include <cstdint>
#include <map>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include "onsetnet/errors.hpp"
#include "onsetnet/image.hpp"
#include "onsetnet/rng.hpp"
#include "onsetnet/tensor.hpp"

namespace onsetnet {

// Oriented box in frame coordinates. (cx, cy) is the center in continuous
// pixel units where pixel (i, j) spans [j, j+1) x [i, i+1); angle_deg rotates
// the box axes counterclockwise about the center.
struct RoiBox {
    double cx = 0;
    double cy = 0;
    double w = 0;
    double h = 0;
    double angle_deg = 0;
};

struct VideoRecord {
    std::string video_id;
    std::string subject_id;
    double fps = 0;
    std::int64_t duration_frames = 0;
    std::string frames_dir;
    std::vector<double> onsets;                       // seconds, strictly increasing
    std::map<std::string, std::vector<RoiBox>> rois;  // roi name -> one box per frame
};

struct SubjectRecord {
    std::string id;
    std::vector<std::size_t> video_indices;
};

struct Dataset {
    std::vector<VideoRecord> videos;
    std::vector<SubjectRecord> subjects;

    const VideoRecord& video(const std::string& video_id) const;
    const SubjectRecord& subject(const std::string& subject_id) const;
};

// Reads a manifest plus the per-video onset and ROI CSVs it references.
// Relative paths inside the manifest resolve against the manifest directory.
// Malformed rows report the offending file and line number.
Dataset load_annotations(const std::string& manifest_path);

// A frame k owns the half-open time span [k / fps, (k + 1) / fps).
bool is_onset_frame(const std::vector<double>& onsets, double fps, std::int64_t frame);

enum class WindowLabel { onset, near_onset, non_onset };

const char* window_label_name(WindowLabel label);

// Label of the window whose reference frame is ref_frame. A window is an
// onset window when the reference frame owns an onset; it is near when a
// frame within near_radius owns one and the reference frame does not.
WindowLabel classify_window(const std::vector<double>& onsets, double fps, std::int64_t ref_frame,
                            std::int64_t near_radius = 1);

// Soft target row (non-onset prob, onset prob) for a window label.
std::array<float, 2> target_for(WindowLabel label);

// Reference frame sits 5 frames from the start of the 9-frame window.
inline constexpr std::int64_t window_frames_before = 5;
inline constexpr std::int64_t window_frames_after = 3;
inline constexpr std::int64_t window_frames = window_frames_before + 1 + window_frames_after;

inline bool window_in_bounds(std::int64_t ref_frame, std::int64_t duration_frames) {
    return ref_frame - window_frames_before >= 0 && ref_frame + window_frames_after < duration_frames;
}

// Decoded-frame cache. Records which subjects had pixels read so tests can
// assert the training loop never touches held-out subjects.
class FrameStore {
  public:
    explicit FrameStore(const Dataset& dataset) : dataset_(&dataset) {}

    const Image& frame(std::size_t video_index, std::int64_t frame_idx);
    const Dataset& dataset() const { return *dataset_; }
    const std::set<std::string>& subjects_read() const { return subjects_read_; }
    std::size_t cached_frames() const { return cache_.size(); }
    void drop_cache() { cache_.clear(); }

  private:
    const Dataset* dataset_;
    std::map<std::pair<std::size_t, std::int64_t>, Image> cache_;
    std::set<std::string> subjects_read_;
};

struct ExtractStats {
    std::int64_t boxes_sampled = 0;
    std::int64_t boxes_clamped = 0;  // boxes whose sample grid left the frame
};

// Cuts the 9-frame window around ref_frame for each named ROI and returns a
// [S, C, 9, out_h, out_w] tensor with pixel values scaled to [0, 1].
//
// Each ROI is resampled upright: output pixel (v, u) reads the frame at the
// box center plus the box rotation applied to
//   ((u + 0.5 + dx) * w / out_w - w / 2, (v + 0.5 + dy) * h / out_h - h / 2),
// so (dx, dy) shifts the crop by whole output pixels in box coordinates and
// a box spanning the full frame at zero jitter reduces to a plain resize.
// Samples are bilinear with edge clamp; boxes that leave the frame are
// clamped and counted, never an error.
Tensor<float> extract_window(FrameStore& store, std::size_t video_index,
                             const std::vector<std::string>& roi_names, std::int64_t ref_frame,
                             double dx, double dy, std::int64_t out_h, std::int64_t out_w,
                             ExtractStats* stats = nullptr);

// Crop offsets for one window: the first is always (0, 0), the rest are
// uniform in [-max_jitter, +max_jitter]^2.
std::vector<std::pair<double, double>> augment_offsets(Rng& rng, double max_jitter, std::int64_t count);

struct SampleWindow {
    std::size_t video_index = 0;
    std::int64_t ref_frame = 0;
    WindowLabel label = WindowLabel::non_onset;
};

struct SampleIndex {
    std::vector<SampleWindow> onset_pool;
    std::vector<SampleWindow> near_pool;
    std::vector<SampleWindow> non_pool;
    std::int64_t da_factor = 0;
    std::int64_t epoch_size = 0;         // 4 * |onset_pool| * da_factor
    std::int64_t batches_per_epoch = 0;  // epoch_size / batch size

    const std::vector<SampleWindow>& pool(WindowLabel label) const;
};

inline constexpr std::int64_t batch_size = 24;
inline constexpr std::int64_t batch_non = 12;
inline constexpr std::int64_t batch_onset = 6;
inline constexpr std::int64_t batch_near = 6;

// Enumerates every in-bounds window of the listed subjects into per-label
// pools. Deterministic given (dataset, subject order, da_factor).
SampleIndex build_index(const Dataset& dataset, const std::vector<std::string>& subject_ids,
                        std::int64_t da_factor);

// Draws balanced 24-sample batches: 12 non-onset, 6 onset, 6 near, shuffled.
// Each pool cycles through (window, variant) pairs without replacement and
// reshuffles when exhausted; variant 0 uses the centered crop, other
// variants draw a fresh jitter each time they come up.
class BalancedSampler {
  public:
    struct Draw {
        SampleWindow window;
        double dx = 0;
        double dy = 0;
    };
    struct Plan {
        std::vector<Draw> samples;  // batch_size entries
        Tensor<float> targets;      // [batch_size, 2]
    };

    BalancedSampler(const SampleIndex& index, double max_jitter, std::uint64_t seed);

    Plan next_batch();
    std::int64_t batches_drawn() const { return batches_drawn_; }

  private:
    struct PoolState {
        const std::vector<SampleWindow>* windows = nullptr;
        const char* name = "";
        std::vector<std::pair<std::uint32_t, std::uint32_t>> order;  // (window, variant)
        std::size_t cursor = 0;
        Rng shuffle_rng{0};
        Rng jitter_rng{0};
    };

    Draw draw_one(PoolState& pool);

    double max_jitter_;
    PoolState onset_, near_, non_;
    Rng batch_rng_;
    std::int64_t batches_drawn_ = 0;
};

// Stacks planned draws into per-stream [N, C, 9, out_h, out_w] batches, in
// roi_names order.
std::vector<Tensor<float>> materialize_batch(FrameStore& store, const std::vector<BalancedSampler::Draw>& draws,
                                             const std::vector<std::string>& roi_names, std::int64_t out_h,
                                             std::int64_t out_w, ExtractStats* stats = nullptr);

struct SplitPlan {
    std::int64_t split_id = 0;
    std::string test_subject;
    std::string validation_subject;
    std::vector<std::string> train_subjects;
};

// Nine-fold rotation: split i tests subject i and validates subject (i+1)%9.
std::vector<SplitPlan> make_splits(const std::vector<std::string>& subject_ids);

}  // namespace onsetnet
