#include "onsetnet/dataset.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <numbers>
#include <set>
#include <sstream>

#include <json.hpp>

namespace onsetnet {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

std::vector<std::string> read_lines(const std::string& path, const char* what) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw DataError(std::string(what) + ": cannot open " + path);
    }
    std::vector<std::string> lines;
    std::string line;
    while (std::getline(in, line)) {
        if (!line.empty() && line.back() == '\r') {
            line.pop_back();
        }
        lines.push_back(line);
    }
    return lines;
}

std::vector<std::string> split_csv(const std::string& line) {
    std::vector<std::string> fields;
    std::string cur;
    for (char c : line) {
        if (c == ',') {
            fields.push_back(cur);
            cur.clear();
        } else {
            cur.push_back(c);
        }
    }
    fields.push_back(cur);
    return fields;
}

double parse_double(const std::string& text, const std::string& where) {
    double value = 0;
    const char* begin = text.data();
    const char* end = begin + text.size();
    auto [ptr, ec] = std::from_chars(begin, end, value);
    if (ec != std::errc() || ptr != end || !std::isfinite(value)) {
        throw DataError(where + ": bad number '" + text + "'");
    }
    return value;
}

std::int64_t parse_int(const std::string& text, const std::string& where) {
    std::int64_t value = 0;
    const char* begin = text.data();
    const char* end = begin + text.size();
    auto [ptr, ec] = std::from_chars(begin, end, value);
    if (ec != std::errc() || ptr != end) {
        throw DataError(where + ": bad integer '" + text + "'");
    }
    return value;
}

std::string line_tag(const std::string& path, std::size_t line_no) {
    return fs::path(path).filename().string() + ":" + std::to_string(line_no);
}

std::vector<double> read_onsets_csv(const std::string& path, const std::string& video_id, double fps,
                                    std::int64_t duration_frames) {
    const std::vector<std::string> lines = read_lines(path, "onsets");
    if (lines.empty() || lines[0] != "video_id,onset_sec") {
        throw DataError("onsets: video " + video_id + ": " + line_tag(path, 1) +
                        ": expected header 'video_id,onset_sec'");
    }
    const double duration_sec = static_cast<double>(duration_frames) / fps;
    std::vector<double> onsets;
    for (std::size_t i = 1; i < lines.size(); ++i) {
        const std::string where = "onsets: video " + video_id + ": " + line_tag(path, i + 1);
        const std::vector<std::string> f = split_csv(lines[i]);
        if (f.size() != 2) {
            throw DataError(where + ": expected 2 fields, got " + std::to_string(f.size()));
        }
        if (f[0] != video_id) {
            throw DataError(where + ": row belongs to video '" + f[0] + "'");
        }
        const double t = parse_double(f[1], where);
        if (t < 0 || t >= duration_sec) {
            throw DataError(where + ": onset " + f[1] + " outside video duration [0, " +
                            std::to_string(duration_sec) + ")");
        }
        if (!onsets.empty() && t <= onsets.back()) {
            throw DataError(where + ": onsets not strictly increasing");
        }
        onsets.push_back(t);
    }
    return onsets;
}

std::map<std::string, std::vector<RoiBox>> read_rois_csv(const std::string& path, const std::string& video_id,
                                                         std::int64_t duration_frames) {
    const std::vector<std::string> lines = read_lines(path, "rois");
    if (lines.empty() || lines[0] != "video_id,frame_idx,roi_name,cx,cy,w,h,angle_deg") {
        throw DataError("rois: video " + video_id + ": " + line_tag(path, 1) +
                        ": expected header 'video_id,frame_idx,roi_name,cx,cy,w,h,angle_deg'");
    }
    std::map<std::string, std::vector<RoiBox>> tracks;
    std::map<std::string, std::vector<char>> seen;
    for (std::size_t i = 1; i < lines.size(); ++i) {
        const std::string where = "rois: video " + video_id + ": " + line_tag(path, i + 1);
        const std::vector<std::string> f = split_csv(lines[i]);
        if (f.size() != 8) {
            throw DataError(where + ": expected 8 fields, got " + std::to_string(f.size()));
        }
        if (f[0] != video_id) {
            throw DataError(where + ": row belongs to video '" + f[0] + "'");
        }
        const std::int64_t frame = parse_int(f[1], where);
        if (frame < 0 || frame >= duration_frames) {
            throw DataError(where + ": frame index " + f[1] + " outside [0, " +
                            std::to_string(duration_frames) + ")");
        }
        const std::string& name = f[2];
        if (name.empty()) {
            throw DataError(where + ": empty roi_name");
        }
        RoiBox box;
        box.cx = parse_double(f[3], where);
        box.cy = parse_double(f[4], where);
        box.w = parse_double(f[5], where);
        box.h = parse_double(f[6], where);
        box.angle_deg = parse_double(f[7], where);
        if (box.w <= 0 || box.h <= 0) {
            throw DataError(where + ": box sides must be positive");
        }
        auto [it, fresh] = tracks.try_emplace(name, static_cast<std::size_t>(duration_frames));
        if (fresh) {
            seen[name].assign(static_cast<std::size_t>(duration_frames), 0);
        }
        std::vector<char>& mask = seen[name];
        if (mask[static_cast<std::size_t>(frame)]) {
            throw DataError(where + ": duplicate box for frame " + f[1] + " roi '" + name + "'");
        }
        mask[static_cast<std::size_t>(frame)] = 1;
        it->second[static_cast<std::size_t>(frame)] = box;
    }
    if (tracks.empty()) {
        throw DataError("rois: video " + video_id + ": " + fs::path(path).filename().string() +
                        " defines no ROI tracks");
    }
    for (const auto& [name, mask] : seen) {
        for (std::size_t frame = 0; frame < mask.size(); ++frame) {
            if (!mask[frame]) {
                throw DataError("rois: video " + video_id + ": roi '" + name + "' missing a box for frame " +
                                std::to_string(frame));
            }
        }
    }
    return tracks;
}

}  // namespace

const VideoRecord& Dataset::video(const std::string& video_id) const {
    for (const VideoRecord& v : videos) {
        if (v.video_id == video_id) {
            return v;
        }
    }
    throw DataError("dataset: unknown video '" + video_id + "'");
}

const SubjectRecord& Dataset::subject(const std::string& subject_id) const {
    for (const SubjectRecord& s : subjects) {
        if (s.id == subject_id) {
            return s;
        }
    }
    throw DataError("dataset: unknown subject '" + subject_id + "'");
}

Dataset load_annotations(const std::string& manifest_path) {
    std::ifstream in(manifest_path, std::ios::binary);
    if (!in) {
        throw DataError("manifest: cannot open " + manifest_path);
    }
    json root;
    try {
        in >> root;
    } catch (const json::exception& e) {
        throw DataError("manifest: " + manifest_path + ": " + e.what());
    }

    const fs::path base = fs::path(manifest_path).parent_path();
    const auto resolve = [&base](const std::string& p) {
        const fs::path q(p);
        return q.is_absolute() ? q.lexically_normal().string() : (base / q).lexically_normal().string();
    };

    Dataset ds;
    std::set<std::string> subject_ids;
    std::set<std::string> video_ids;
    try {
        const json& subjects = root.at("subjects");
        if (!subjects.is_array() || subjects.empty()) {
            throw DataError("manifest: 'subjects' must be a non-empty array");
        }
        for (const json& sj : subjects) {
            SubjectRecord subject;
            subject.id = sj.at("id").get<std::string>();
            if (subject.id.empty()) {
                throw DataError("manifest: empty subject id");
            }
            if (!subject_ids.insert(subject.id).second) {
                throw DataError("manifest: duplicate subject id '" + subject.id + "'");
            }
            for (const json& vj : sj.at("videos")) {
                VideoRecord video;
                video.video_id = vj.at("video_id").get<std::string>();
                video.subject_id = subject.id;
                video.fps = vj.at("fps").get<double>();
                video.duration_frames = vj.at("duration_frames").get<std::int64_t>();
                video.frames_dir = resolve(vj.at("frames_dir").get<std::string>());
                if (video.video_id.empty()) {
                    throw DataError("manifest: subject '" + subject.id + "' has a video with an empty id");
                }
                if (!video_ids.insert(video.video_id).second) {
                    throw DataError("manifest: duplicate video id '" + video.video_id + "'");
                }
                if (!(video.fps > 0) || !std::isfinite(video.fps)) {
                    throw DataError("manifest: video " + video.video_id + ": fps must be positive");
                }
                if (video.duration_frames < 1) {
                    throw DataError("manifest: video " + video.video_id + ": duration_frames must be >= 1");
                }
                video.onsets = read_onsets_csv(resolve(vj.at("onsets_csv").get<std::string>()), video.video_id,
                                               video.fps, video.duration_frames);
                video.rois = read_rois_csv(resolve(vj.at("rois_csv").get<std::string>()), video.video_id,
                                           video.duration_frames);
                subject.video_indices.push_back(ds.videos.size());
                ds.videos.push_back(std::move(video));
            }
            ds.subjects.push_back(std::move(subject));
        }
    } catch (const json::exception& e) {
        throw DataError("manifest: " + manifest_path + ": " + e.what());
    }
    return ds;
}

bool is_onset_frame(const std::vector<double>& onsets, double fps, std::int64_t frame) {
    if (frame < 0) {
        return false;
    }
    const double lo = static_cast<double>(frame) / fps;
    const double hi = static_cast<double>(frame + 1) / fps;
    const auto it = std::lower_bound(onsets.begin(), onsets.end(), lo);
    return it != onsets.end() && *it < hi;
}

const char* window_label_name(WindowLabel label) {
    switch (label) {
        case WindowLabel::onset:
            return "onset";
        case WindowLabel::near_onset:
            return "near_onset";
        case WindowLabel::non_onset:
            return "non_onset";
    }
    return "?";
}

WindowLabel classify_window(const std::vector<double>& onsets, double fps, std::int64_t ref_frame,
                            std::int64_t near_radius) {
    if (is_onset_frame(onsets, fps, ref_frame)) {
        return WindowLabel::onset;
    }
    for (std::int64_t d = 1; d <= near_radius; ++d) {
        if (is_onset_frame(onsets, fps, ref_frame - d) || is_onset_frame(onsets, fps, ref_frame + d)) {
            return WindowLabel::near_onset;
        }
    }
    return WindowLabel::non_onset;
}

std::array<float, 2> target_for(WindowLabel label) {
    switch (label) {
        case WindowLabel::onset:
            return {0.0f, 1.0f};
        case WindowLabel::near_onset:
            return {0.75f, 0.25f};
        case WindowLabel::non_onset:
            return {1.0f, 0.0f};
    }
    return {0.0f, 0.0f};
}

const Image& FrameStore::frame(std::size_t video_index, std::int64_t frame_idx) {
    if (video_index >= dataset_->videos.size()) {
        throw DataError("frames: video index out of range");
    }
    const VideoRecord& video = dataset_->videos[video_index];
    if (frame_idx < 0 || frame_idx >= video.duration_frames) {
        throw DataError("frames: video " + video.video_id + ": frame " + std::to_string(frame_idx) +
                        " outside [0, " + std::to_string(video.duration_frames) + ")");
    }
    subjects_read_.insert(video.subject_id);
    const auto key = std::make_pair(video_index, frame_idx);
    auto it = cache_.find(key);
    if (it == cache_.end()) {
        char name[32];
        std::snprintf(name, sizeof(name), "%06lld.png", static_cast<long long>(frame_idx));
        const std::string path = (fs::path(video.frames_dir) / name).string();
        it = cache_.emplace(key, read_image_rgb(path)).first;
    }
    return it->second;
}

Tensor<float> extract_window(FrameStore& store, std::size_t video_index,
                             const std::vector<std::string>& roi_names, std::int64_t ref_frame,
                             double dx, double dy, std::int64_t out_h, std::int64_t out_w,
                             ExtractStats* stats) {
    const Dataset& ds = store.dataset();
    if (video_index >= ds.videos.size()) {
        throw DataError("extract: video index out of range");
    }
    const VideoRecord& video = ds.videos[video_index];
    if (roi_names.empty()) {
        throw NumericError("extract: roi_names must be non-empty");
    }
    if (out_h < 1 || out_w < 1) {
        throw NumericError("extract: output size must be positive");
    }
    if (!window_in_bounds(ref_frame, video.duration_frames)) {
        throw DataError("extract: video " + video.video_id + ": window around frame " +
                        std::to_string(ref_frame) + " leaves [0, " + std::to_string(video.duration_frames) + ")");
    }

    const std::int64_t S = static_cast<std::int64_t>(roi_names.size());
    Tensor<float> out({S, 3, window_frames, out_h, out_w});
    float* out_data = out.data();
    for (std::int64_t s = 0; s < S; ++s) {
        const auto track_it = video.rois.find(roi_names[static_cast<std::size_t>(s)]);
        if (track_it == video.rois.end()) {
            throw DataError("extract: video " + video.video_id + " has no ROI track '" +
                            roi_names[static_cast<std::size_t>(s)] + "'");
        }
        const std::vector<RoiBox>& track = track_it->second;
        for (std::int64_t t = 0; t < window_frames; ++t) {
            const std::int64_t frame_idx = ref_frame - window_frames_before + t;
            const Image& img = store.frame(video_index, frame_idx);
            const RoiBox& box = track[static_cast<std::size_t>(frame_idx)];
            const double theta = box.angle_deg * std::numbers::pi / 180.0;
            const double ct = std::cos(theta);
            const double st = std::sin(theta);
            const double sx = box.w / static_cast<double>(out_w);
            const double sy = box.h / static_cast<double>(out_h);
            const double W = static_cast<double>(img.width);
            const double H = static_cast<double>(img.height);
            bool clamped = false;
            for (std::int64_t v = 0; v < out_h; ++v) {
                const double ly = (static_cast<double>(v) + 0.5 + dy) * sy - box.h / 2;
                for (std::int64_t u = 0; u < out_w; ++u) {
                    const double lx = (static_cast<double>(u) + 0.5 + dx) * sx - box.w / 2;
                    const double px = box.cx + ct * lx - st * ly;
                    const double py = box.cy + st * lx + ct * ly;
                    if (px < 0 || px > W || py < 0 || py > H) {
                        clamped = true;
                    }
                    const double fx = px - 0.5;
                    const double fy = py - 0.5;
                    const double x0f = std::floor(fx);
                    const double y0f = std::floor(fy);
                    const double tx = fx - x0f;
                    const double ty = fy - y0f;
                    const std::int64_t x0 = std::clamp<std::int64_t>(static_cast<std::int64_t>(x0f), 0, img.width - 1);
                    const std::int64_t x1 = std::clamp<std::int64_t>(static_cast<std::int64_t>(x0f) + 1, 0, img.width - 1);
                    const std::int64_t y0 = std::clamp<std::int64_t>(static_cast<std::int64_t>(y0f), 0, img.height - 1);
                    const std::int64_t y1 = std::clamp<std::int64_t>(static_cast<std::int64_t>(y0f) + 1, 0, img.height - 1);
                    for (std::int64_t c = 0; c < 3; ++c) {
                        const double v00 = img.at(y0, x0, c);
                        const double v01 = img.at(y0, x1, c);
                        const double v10 = img.at(y1, x0, c);
                        const double v11 = img.at(y1, x1, c);
                        const double top = (1 - tx) * v00 + tx * v01;
                        const double bot = (1 - tx) * v10 + tx * v11;
                        out_data[(((s * 3 + c) * window_frames + t) * out_h + v) * out_w + u] =
                            static_cast<float>(((1 - ty) * top + ty * bot) / 255.0);
                    }
                }
            }
            if (stats != nullptr) {
                ++stats->boxes_sampled;
                if (clamped) {
                    ++stats->boxes_clamped;
                }
            }
        }
    }
    return out;
}

std::vector<std::pair<double, double>> augment_offsets(Rng& rng, double max_jitter, std::int64_t count) {
    if (count < 1) {
        throw NumericError("augment: count must be >= 1");
    }
    if (max_jitter < 0) {
        throw NumericError("augment: max_jitter must be >= 0");
    }
    std::vector<std::pair<double, double>> offsets;
    offsets.reserve(static_cast<std::size_t>(count));
    offsets.emplace_back(0.0, 0.0);
    for (std::int64_t i = 1; i < count; ++i) {
        const double dx = rng.uniform(-max_jitter, max_jitter);
        const double dy = rng.uniform(-max_jitter, max_jitter);
        offsets.emplace_back(dx, dy);
    }
    return offsets;
}

const std::vector<SampleWindow>& SampleIndex::pool(WindowLabel label) const {
    switch (label) {
        case WindowLabel::onset:
            return onset_pool;
        case WindowLabel::near_onset:
            return near_pool;
        case WindowLabel::non_onset:
            return non_pool;
    }
    return non_pool;
}

SampleIndex build_index(const Dataset& dataset, const std::vector<std::string>& subject_ids,
                        std::int64_t da_factor) {
    if (subject_ids.empty()) {
        throw DataError("index: subject list is empty");
    }
    if (da_factor < 1) {
        throw ConfigError("index: da_factor must be >= 1");
    }
    std::set<std::string> seen;
    SampleIndex index;
    index.da_factor = da_factor;
    for (const std::string& id : subject_ids) {
        if (!seen.insert(id).second) {
            throw DataError("index: duplicate subject '" + id + "'");
        }
        const SubjectRecord& subject = dataset.subject(id);
        if (subject.video_indices.empty()) {
            throw DataError("index: subject '" + id + "' has no videos");
        }
        for (const std::size_t vi : subject.video_indices) {
            const VideoRecord& video = dataset.videos[vi];
            for (std::int64_t ref = window_frames_before;
                 ref + window_frames_after < video.duration_frames; ++ref) {
                const WindowLabel label = classify_window(video.onsets, video.fps, ref);
                SampleWindow window{vi, ref, label};
                switch (label) {
                    case WindowLabel::onset:
                        index.onset_pool.push_back(window);
                        break;
                    case WindowLabel::near_onset:
                        index.near_pool.push_back(window);
                        break;
                    case WindowLabel::non_onset:
                        index.non_pool.push_back(window);
                        break;
                }
            }
        }
    }
    index.epoch_size = 4 * static_cast<std::int64_t>(index.onset_pool.size()) * da_factor;
    index.batches_per_epoch = index.epoch_size / batch_size;
    return index;
}

BalancedSampler::BalancedSampler(const SampleIndex& index, double max_jitter, std::uint64_t seed)
    : max_jitter_(max_jitter), batch_rng_(Rng(seed).substream("batch_order")) {
    if (max_jitter < 0) {
        throw NumericError("sampler: max_jitter must be >= 0");
    }
    const auto init_pool = [&](PoolState& pool, const std::vector<SampleWindow>& windows, const char* name) {
        if (windows.empty()) {
            throw DataError("sampler: empty " + std::string(name) + " pool");
        }
        pool.windows = &windows;
        pool.name = name;
        pool.shuffle_rng = Rng(seed).substream(std::string(name) + ".shuffle");
        pool.jitter_rng = Rng(seed).substream(std::string(name) + ".jitter");
        const std::uint32_t da = static_cast<std::uint32_t>(index.da_factor);
        pool.order.reserve(windows.size() * static_cast<std::size_t>(da));
        for (std::uint32_t w = 0; w < static_cast<std::uint32_t>(windows.size()); ++w) {
            for (std::uint32_t variant = 0; variant < da; ++variant) {
                pool.order.emplace_back(w, variant);
            }
        }
        pool.shuffle_rng.shuffle(pool.order);
        pool.cursor = 0;
    };
    init_pool(onset_, index.onset_pool, "onset");
    init_pool(near_, index.near_pool, "near_onset");
    init_pool(non_, index.non_pool, "non_onset");
}

BalancedSampler::Draw BalancedSampler::draw_one(PoolState& pool) {
    if (pool.cursor == pool.order.size()) {
        pool.shuffle_rng.shuffle(pool.order);
        pool.cursor = 0;
    }
    const auto [w, variant] = pool.order[pool.cursor++];
    Draw draw;
    draw.window = (*pool.windows)[w];
    if (variant != 0) {
        draw.dx = pool.jitter_rng.uniform(-max_jitter_, max_jitter_);
        draw.dy = pool.jitter_rng.uniform(-max_jitter_, max_jitter_);
    }
    return draw;
}

BalancedSampler::Plan BalancedSampler::next_batch() {
    Plan plan;
    plan.samples.reserve(static_cast<std::size_t>(batch_size));
    for (std::int64_t i = 0; i < batch_non; ++i) {
        plan.samples.push_back(draw_one(non_));
    }
    for (std::int64_t i = 0; i < batch_onset; ++i) {
        plan.samples.push_back(draw_one(onset_));
    }
    for (std::int64_t i = 0; i < batch_near; ++i) {
        plan.samples.push_back(draw_one(near_));
    }
    batch_rng_.shuffle(plan.samples);
    plan.targets = Tensor<float>({batch_size, 2});
    for (std::int64_t i = 0; i < batch_size; ++i) {
        const std::array<float, 2> row = target_for(plan.samples[static_cast<std::size_t>(i)].window.label);
        plan.targets[i * 2 + 0] = row[0];
        plan.targets[i * 2 + 1] = row[1];
    }
    ++batches_drawn_;
    return plan;
}

std::vector<Tensor<float>> materialize_batch(FrameStore& store, const std::vector<BalancedSampler::Draw>& draws,
                                             const std::vector<std::string>& roi_names, std::int64_t out_h,
                                             std::int64_t out_w, ExtractStats* stats) {
    if (draws.empty()) {
        throw NumericError("materialize: empty draw list");
    }
    const std::int64_t N = static_cast<std::int64_t>(draws.size());
    const std::int64_t S = static_cast<std::int64_t>(roi_names.size());
    std::vector<Tensor<float>> streams;
    streams.reserve(static_cast<std::size_t>(S));
    for (std::int64_t s = 0; s < S; ++s) {
        streams.emplace_back(Shape{N, 3, window_frames, out_h, out_w});
    }
    const std::size_t slab = static_cast<std::size_t>(3 * window_frames * out_h * out_w);
    for (std::int64_t n = 0; n < N; ++n) {
        const BalancedSampler::Draw& d = draws[static_cast<std::size_t>(n)];
        const Tensor<float> window = extract_window(store, d.window.video_index, roi_names, d.window.ref_frame,
                                                    d.dx, d.dy, out_h, out_w, stats);
        for (std::int64_t s = 0; s < S; ++s) {
            std::copy_n(window.data() + static_cast<std::size_t>(s) * slab, slab,
                        streams[static_cast<std::size_t>(s)].data() + static_cast<std::size_t>(n) * slab);
        }
    }
    return streams;
}

std::vector<SplitPlan> make_splits(const std::vector<std::string>& subject_ids) {
    if (subject_ids.size() != 9) {
        throw DataError("splits: expected exactly 9 subjects, got " + std::to_string(subject_ids.size()));
    }
    std::set<std::string> unique(subject_ids.begin(), subject_ids.end());
    if (unique.size() != subject_ids.size()) {
        throw DataError("splits: subject ids must be distinct");
    }
    std::vector<SplitPlan> plans;
    plans.reserve(9);
    for (std::size_t i = 0; i < 9; ++i) {
        SplitPlan plan;
        plan.split_id = static_cast<std::int64_t>(i);
        plan.test_subject = subject_ids[i];
        plan.validation_subject = subject_ids[(i + 1) % 9];
        for (std::size_t j = 0; j < 9; ++j) {
            if (j != i && j != (i + 1) % 9) {
                plan.train_subjects.push_back(subject_ids[j]);
            }
        }
        plans.push_back(std::move(plan));
    }
    return plans;
}

}  // namespace onsetnet
