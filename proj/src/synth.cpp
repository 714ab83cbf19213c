#include "onsetnet/synth.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <numbers>
#include <set>

#include <json.hpp>

namespace onsetnet {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

std::string fmt_double(double v) {
    char buf[64];
    const auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v);
    if (ec != std::errc()) {
        throw NumericError("synth: cannot format number");
    }
    return std::string(buf, ptr);
}

void check_spec(const SynthSpec& spec) {
    const auto fail = [](const std::string& msg) { throw ConfigError("synth: " + msg); };
    if (spec.subjects < 1) fail("subjects must be >= 1");
    if (spec.videos_per_subject < 1) fail("videos_per_subject must be >= 1");
    if (!(spec.fps > 0) || !std::isfinite(spec.fps)) fail("fps must be positive");
    if (!(spec.duration_sec > 0) || !std::isfinite(spec.duration_sec)) fail("duration_sec must be positive");
    if (spec.frame_height < 32 || spec.frame_width < 32) fail("frame size must be at least 32x32");
    if (spec.roi_names.empty()) fail("roi_names must be non-empty");
    std::set<std::string> names(spec.roi_names.begin(), spec.roi_names.end());
    if (names.size() != spec.roi_names.size()) fail("roi_names must be distinct");
    for (const std::string& cue : spec.cue_rois) {
        if (names.count(cue) == 0) fail("cue roi '" + cue + "' is not in roi_names");
    }
    if (spec.min_gap_frames < 2 || spec.max_gap_frames < spec.min_gap_frames) {
        fail("gap range must satisfy 2 <= min <= max");
    }
}

struct EllipseTrack {
    double cx0 = 0, cy0 = 0;          // rest position
    double ax = 0, ay = 0;            // drift amplitudes
    double wx = 0, wy = 0;            // drift angular frequencies per frame
    double px = 0, py = 0;            // drift phases
    double w = 0, h = 0;              // box sides
    double angle0 = 0, angle_amp = 0; // rotation in degrees
    double wa = 0, pa = 0;

    RoiBox box_at(std::int64_t t) const {
        RoiBox b;
        b.cx = cx0 + ax * std::sin(wx * static_cast<double>(t) + px);
        b.cy = cy0 + ay * std::sin(wy * static_cast<double>(t) + py);
        b.w = w;
        b.h = h;
        b.angle_deg = angle0 + angle_amp * std::sin(wa * static_cast<double>(t) + pa);
        return b;
    }
};

struct SubjectLook {
    double bg[3];
    double marker[3];
    double aspect = 1;
    double radius_scale = 1;
};

SubjectLook subject_look(Rng rng) {
    SubjectLook look;
    for (int c = 0; c < 3; ++c) {
        look.bg[c] = rng.uniform(30, 70);
    }
    for (int c = 0; c < 3; ++c) {
        look.marker[c] = rng.uniform(90, 150);
    }
    look.aspect = rng.uniform(0.75, 1.25);
    look.radius_scale = rng.uniform(0.85, 1.1);
    return look;
}

EllipseTrack make_track(Rng& rng, std::size_t roi_index, std::size_t roi_count, std::int64_t frame_w,
                        std::int64_t frame_h) {
    const std::size_t cols = roi_count <= 1 ? 1 : (roi_count <= 4 ? 2 : 3);
    const std::size_t rows = (roi_count + cols - 1) / cols;
    const double cell_w = static_cast<double>(frame_w) / static_cast<double>(cols);
    const double cell_h = static_cast<double>(frame_h) / static_cast<double>(rows);
    const std::size_t col = roi_index % cols;
    const std::size_t row = roi_index / cols;
    const double cell_min = std::min(cell_w, cell_h);

    EllipseTrack tr;
    tr.cx0 = (static_cast<double>(col) + 0.5) * cell_w + rng.uniform(-0.04, 0.04) * cell_w;
    tr.cy0 = (static_cast<double>(row) + 0.5) * cell_h + rng.uniform(-0.04, 0.04) * cell_h;
    tr.w = cell_min * rng.uniform(0.40, 0.52);
    tr.h = cell_min * rng.uniform(0.40, 0.52);
    tr.ax = rng.uniform(2.0, 5.0);
    tr.ay = rng.uniform(2.0, 5.0);
    tr.wx = rng.uniform(0.02, 0.08);
    tr.wy = rng.uniform(0.02, 0.08);
    tr.px = rng.uniform(0.0, 2 * std::numbers::pi);
    tr.py = rng.uniform(0.0, 2 * std::numbers::pi);
    tr.angle0 = rng.uniform(-10.0, 10.0);
    tr.angle_amp = rng.uniform(5.0, 18.0);
    tr.wa = rng.uniform(0.01, 0.05);
    tr.pa = rng.uniform(0.0, 2 * std::numbers::pi);
    return tr;
}

std::uint8_t to_byte(double v) { return static_cast<std::uint8_t>(std::clamp(v, 0.0, 255.0)); }

void render_frame(Image& img, const SubjectLook& look, const std::vector<EllipseTrack>& tracks,
                  const std::vector<char>& roi_has_cue, std::int64_t t, double cue_level,
                  double bg_amp, double bg_freq, double bg_phase) {
    const double wobble = bg_amp * std::sin(bg_freq * static_cast<double>(t) + bg_phase);
    for (std::int64_t y = 0; y < img.height; ++y) {
        const double gy = (static_cast<double>(y) / static_cast<double>(img.height - 1) - 0.5) * 10.0;
        for (std::int64_t x = 0; x < img.width; ++x) {
            const double gx = (static_cast<double>(x) / static_cast<double>(img.width - 1) - 0.5) * 14.0;
            for (std::int64_t c = 0; c < 3; ++c) {
                img.at(y, x, c) = to_byte(look.bg[c] + wobble + gx + gy);
            }
        }
    }
    for (std::size_t r = 0; r < tracks.size(); ++r) {
        const RoiBox box = tracks[r].box_at(t);
        const double theta = box.angle_deg * std::numbers::pi / 180.0;
        const double ct = std::cos(theta);
        const double st = std::sin(theta);
        const double rx = 0.38 * box.w * look.radius_scale;
        const double ry = 0.38 * box.h * look.radius_scale * look.aspect;
        const double level = roi_has_cue[r] ? cue_level : 0.0;
        double color[3];
        for (int c = 0; c < 3; ++c) {
            color[c] = look.marker[c] + level * (250.0 - look.marker[c]);
        }
        // bright notch along the box +x axis makes the marker orientation-asymmetric
        const double nx = 0.45 * rx;
        const double nr = 0.28 * std::min(rx, ry);
        const double reach = std::max(rx, ry) + 1.0;
        const std::int64_t y_lo = std::max<std::int64_t>(0, static_cast<std::int64_t>(std::floor(box.cy - reach)));
        const std::int64_t y_hi = std::min<std::int64_t>(img.height - 1, static_cast<std::int64_t>(std::ceil(box.cy + reach)));
        const std::int64_t x_lo = std::max<std::int64_t>(0, static_cast<std::int64_t>(std::floor(box.cx - reach)));
        const std::int64_t x_hi = std::min<std::int64_t>(img.width - 1, static_cast<std::int64_t>(std::ceil(box.cx + reach)));
        for (std::int64_t y = y_lo; y <= y_hi; ++y) {
            for (std::int64_t x = x_lo; x <= x_hi; ++x) {
                const double dx = (static_cast<double>(x) + 0.5) - box.cx;
                const double dy = (static_cast<double>(y) + 0.5) - box.cy;
                const double u = ct * dx + st * dy;
                const double v = -st * dx + ct * dy;
                const double q = (u / rx) * (u / rx) + (v / ry) * (v / ry);
                if (q > 1.0) {
                    continue;
                }
                const double du = u - nx;
                const bool notch = du * du + v * v <= nr * nr;
                for (std::int64_t c = 0; c < 3; ++c) {
                    const double base = notch ? std::min(color[c] + 60.0, 255.0) : color[c];
                    img.at(y, x, c) = to_byte(base);
                }
            }
        }
    }
}

void write_text_file(const std::string& path, const std::string& content) {
    std::ofstream out(path, std::ios::binary);
    if (!out) {
        throw IoError("synth: cannot open " + path + " for writing");
    }
    out << content;
    if (!out.good()) {
        throw IoError("synth: failed writing " + path);
    }
}

}  // namespace

std::string generate_synthetic(const SynthSpec& spec, std::uint64_t seed, const std::string& out_dir) {
    check_spec(spec);
    const std::int64_t duration_frames = static_cast<std::int64_t>(std::llround(spec.duration_sec * spec.fps));
    if (duration_frames < 4 * spec.max_gap_frames) {
        throw ConfigError("synth: duration too short for the onset gap range");
    }

    std::error_code ec;
    fs::create_directories(out_dir, ec);
    if (ec) {
        throw IoError("synth: cannot create " + out_dir + ": " + ec.message());
    }

    Rng root(seed);
    json manifest_subjects = json::array();

    for (std::int64_t si = 0; si < spec.subjects; ++si) {
        const std::string subject_id = "s" + std::to_string(si);
        const SubjectLook look = subject_look(root.substream("subject." + subject_id));
        json videos = json::array();

        for (std::int64_t vi = 0; vi < spec.videos_per_subject; ++vi) {
            const std::string video_id = subject_id + "_v" + std::to_string(vi);
            const std::string rel_dir = subject_id + "/" + video_id;
            const fs::path video_dir = fs::path(out_dir) / rel_dir;
            const fs::path frames_dir = video_dir / "frames";
            fs::create_directories(frames_dir, ec);
            if (ec) {
                throw IoError("synth: cannot create " + frames_dir.string() + ": " + ec.message());
            }

            Rng video_rng = root.substream("video." + video_id);

            // onset frames with Uniform[min_gap, max_gap] spacing
            Rng onset_rng = video_rng.substream("onsets");
            std::set<std::int64_t> onset_frames;
            std::vector<double> onset_times;
            const std::uint64_t gap_span =
                static_cast<std::uint64_t>(spec.max_gap_frames - spec.min_gap_frames + 1);
            std::int64_t k = window_frames_before + 1 +
                             static_cast<std::int64_t>(onset_rng.uniform_index(gap_span));
            while (k <= duration_frames - window_frames_after - 2) {
                onset_frames.insert(k);
                onset_times.push_back((static_cast<double>(k) + onset_rng.uniform(0.1, 0.9)) / spec.fps);
                k += spec.min_gap_frames + static_cast<std::int64_t>(onset_rng.uniform_index(gap_span));
            }

            Rng track_rng = video_rng.substream("tracks");
            std::vector<EllipseTrack> tracks;
            std::vector<char> roi_has_cue;
            for (std::size_t r = 0; r < spec.roi_names.size(); ++r) {
                tracks.push_back(make_track(track_rng, r, spec.roi_names.size(), spec.frame_width,
                                            spec.frame_height));
                const bool cue = std::find(spec.cue_rois.begin(), spec.cue_rois.end(), spec.roi_names[r]) !=
                                 spec.cue_rois.end();
                roi_has_cue.push_back(cue ? 1 : 0);
            }

            Rng bg_rng = video_rng.substream("background");
            const double bg_amp = bg_rng.uniform(4.0, 9.0);
            const double bg_freq = bg_rng.uniform(0.02, 0.06);
            const double bg_phase = bg_rng.uniform(0.0, 2 * std::numbers::pi);

            Image img(spec.frame_height, spec.frame_width);
            for (std::int64_t t = 0; t < duration_frames; ++t) {
                double cue = 0.0;
                if (onset_frames.count(t) != 0) {
                    cue = 1.0;
                } else if (onset_frames.count(t - 1) != 0 || onset_frames.count(t + 1) != 0) {
                    cue = 0.3;
                }
                render_frame(img, look, tracks, roi_has_cue, t, cue, bg_amp, bg_freq, bg_phase);
                char name[32];
                std::snprintf(name, sizeof(name), "%06lld.png", static_cast<long long>(t));
                write_image_rgb((frames_dir / name).string(), img);
            }

            std::string onset_csv = "video_id,onset_sec\n";
            for (const double t_sec : onset_times) {
                onset_csv += video_id + "," + fmt_double(t_sec) + "\n";
            }
            write_text_file((video_dir / "onsets.csv").string(), onset_csv);

            std::string roi_csv = "video_id,frame_idx,roi_name,cx,cy,w,h,angle_deg\n";
            for (std::int64_t t = 0; t < duration_frames; ++t) {
                for (std::size_t r = 0; r < spec.roi_names.size(); ++r) {
                    const RoiBox b = tracks[r].box_at(t);
                    roi_csv += video_id + "," + std::to_string(t) + "," + spec.roi_names[r] + "," +
                               fmt_double(b.cx) + "," + fmt_double(b.cy) + "," + fmt_double(b.w) + "," +
                               fmt_double(b.h) + "," + fmt_double(b.angle_deg) + "\n";
                }
            }
            write_text_file((video_dir / "rois.csv").string(), roi_csv);

            json vj;
            vj["video_id"] = video_id;
            vj["fps"] = spec.fps;
            vj["duration_frames"] = duration_frames;
            vj["frames_dir"] = rel_dir + "/frames";
            vj["onsets_csv"] = rel_dir + "/onsets.csv";
            vj["rois_csv"] = rel_dir + "/rois.csv";
            videos.push_back(vj);
        }

        json sj;
        sj["id"] = subject_id;
        sj["videos"] = videos;
        manifest_subjects.push_back(sj);
    }

    json manifest;
    manifest["subjects"] = manifest_subjects;
    const std::string manifest_path = (fs::path(out_dir) / "manifest.json").string();
    write_text_file(manifest_path, manifest.dump(2) + "\n");
    return manifest_path;
}

}  // namespace onsetnet
