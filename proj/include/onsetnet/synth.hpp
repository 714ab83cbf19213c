#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "onsetnet/dataset.hpp"

namespace onsetnet {

struct SynthSpec {
    std::int64_t subjects = 9;
    std::int64_t videos_per_subject = 2;
    double fps = 30.0;
    double duration_sec = 30.0;
    std::int64_t frame_height = 96;
    std::int64_t frame_width = 128;
    std::vector<std::string> roi_names = {"mouth", "left_hand", "right_hand", "clarinet_tip"};
    // ROIs that carry the brightness pulse around each onset.
    std::vector<std::string> cue_rois = {"mouth", "clarinet_tip"};
    // Inter-onset gaps in frames, drawn uniformly from [min, max]; the
    // defaults average one onset every 15 frames.
    std::int64_t min_gap_frames = 10;
    std::int64_t max_gap_frames = 20;
};

// Renders a complete dataset under out_dir: per-frame PNGs, onset and ROI
// CSVs, and a manifest tying them together. Subjects differ in background
// and marker appearance; ROI tracks drift and rotate smoothly; each onset
// brightens the cue ROIs for frames k-1..k+1 (full strength at k). The same
// (spec, seed) pair reproduces every file byte for byte.
// Returns the manifest path.
std::string generate_synthetic(const SynthSpec& spec, std::uint64_t seed, const std::string& out_dir);

}  // namespace onsetnet
