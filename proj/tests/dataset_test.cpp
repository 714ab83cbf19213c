#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <unistd.h>

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "onsetnet/dataset.hpp"
#include "onsetnet/image.hpp"
#include "onsetnet/synth.hpp"

using namespace onsetnet;
namespace fs = std::filesystem;

namespace {

std::atomic<int> fixture_counter{0};

struct TempDir {
    fs::path dir;
    TempDir() {
        dir = fs::temp_directory_path() /
              ("onsetnet_ds_" + std::to_string(::getpid()) + "_" + std::to_string(fixture_counter++));
        fs::create_directories(dir);
    }
    ~TempDir() {
        std::error_code ec;
        fs::remove_all(dir, ec);
    }
    std::string path(const std::string& rel) const { return (dir / rel).string(); }
};

void write_file(const std::string& path, const std::string& content) {
    std::ofstream out(path, std::ios::binary);
    REQUIRE(out.good());
    out << content;
    REQUIRE(out.good());
}

std::string manifest_one_video(const std::string& subject, const std::string& video, double fps,
                               std::int64_t duration) {
    return std::string("{\n  \"subjects\": [\n    {\"id\": \"") + subject + "\", \"videos\": [\n" +
           "      {\"video_id\": \"" + video + "\", \"fps\": " + std::to_string(fps) +
           ", \"duration_frames\": " + std::to_string(duration) +
           ",\n       \"frames_dir\": \"frames\", \"onsets_csv\": \"onsets.csv\", \"rois_csv\": \"rois.csv\"}\n" +
           "    ]}\n  ]\n}\n";
}

std::string onsets_csv(const std::string& video, const std::vector<double>& times) {
    std::string text = "video_id,onset_sec\n";
    for (double t : times) {
        text += video + "," + std::to_string(t) + "\n";
    }
    return text;
}

std::string rois_csv(const std::string& video, std::int64_t duration,
                     const std::vector<std::pair<std::string, RoiBox>>& rois) {
    std::string text = "video_id,frame_idx,roi_name,cx,cy,w,h,angle_deg\n";
    for (std::int64_t t = 0; t < duration; ++t) {
        for (const auto& [name, b] : rois) {
            text += video + "," + std::to_string(t) + "," + name + "," + std::to_string(b.cx) + "," +
                    std::to_string(b.cy) + "," + std::to_string(b.w) + "," + std::to_string(b.h) + "," +
                    std::to_string(b.angle_deg) + "\n";
        }
    }
    return text;
}

// Annotation-only fixture; loading never touches pixel files.
std::string write_annotations(const TempDir& tmp, const std::vector<double>& onset_times,
                              std::int64_t duration = 30, double fps = 30.0) {
    const RoiBox box{10, 10, 8, 8, 0};
    write_file(tmp.path("onsets.csv"), onsets_csv("v0", onset_times));
    write_file(tmp.path("rois.csv"), rois_csv("v0", duration, {{"mouth", box}, {"clarinet_tip", box}}));
    write_file(tmp.path("manifest.json"), manifest_one_video("s0", "v0", fps, duration));
    return tmp.path("manifest.json");
}

// Deterministic asymmetric test pattern, distinct per channel.
std::uint8_t pattern(std::int64_t t, std::int64_t y, std::int64_t x, std::int64_t c) {
    return static_cast<std::uint8_t>((7 * x + 13 * y + 29 * t + 41 * c) % 256);
}

void write_pattern_frames(const TempDir& tmp, std::int64_t count, std::int64_t h, std::int64_t w) {
    fs::create_directories(tmp.dir / "frames");
    for (std::int64_t t = 0; t < count; ++t) {
        Image img(h, w);
        for (std::int64_t y = 0; y < h; ++y) {
            for (std::int64_t x = 0; x < w; ++x) {
                for (std::int64_t c = 0; c < 3; ++c) {
                    img.at(y, x, c) = pattern(t, y, x, c);
                }
            }
        }
        char name[32];
        std::snprintf(name, sizeof(name), "%06lld.png", static_cast<long long>(t));
        write_image_rgb(tmp.path("frames/" + std::string(name)), img);
    }
}

// Fixture with real pixels: one video, full ROI tracks, optional onsets.
Dataset pattern_dataset(const TempDir& tmp, std::int64_t duration, std::int64_t h, std::int64_t w,
                        const std::vector<double>& onset_times,
                        const std::vector<std::pair<std::string, RoiBox>>& rois) {
    write_pattern_frames(tmp, duration, h, w);
    write_file(tmp.path("onsets.csv"), onsets_csv("v0", onset_times));
    write_file(tmp.path("rois.csv"), rois_csv("v0", duration, rois));
    write_file(tmp.path("manifest.json"), manifest_one_video("s0", "v0", 30.0, duration));
    return load_annotations(tmp.path("manifest.json"));
}

}  // namespace

TEST_CASE("frame labeling uses half-open frame spans") {
    const double fps = 30.0;
    std::vector<double> onsets = {1.005};
    CHECK(is_onset_frame(onsets, fps, 30));
    CHECK_FALSE(is_onset_frame(onsets, fps, 29));
    CHECK_FALSE(is_onset_frame(onsets, fps, 31));

    // an onset exactly on a frame boundary belongs to the later frame
    std::vector<double> boundary = {2.0 / fps};
    CHECK(is_onset_frame(boundary, fps, 2));
    CHECK_FALSE(is_onset_frame(boundary, fps, 1));

    std::vector<double> none;
    for (std::int64_t k = 0; k < 100; ++k) {
        CHECK_FALSE(is_onset_frame(none, fps, k));
    }

    // two onsets landing in one frame still label a single frame
    std::vector<double> crowded = {1.001, 1.005};
    std::int64_t labeled = 0;
    for (std::int64_t k = 0; k < 60; ++k) {
        labeled += is_onset_frame(crowded, fps, k) ? 1 : 0;
    }
    CHECK(labeled == 1);
}

TEST_CASE("window classification: onset dominates adjacency") {
    const double fps = 30.0;
    std::vector<double> onsets = {30.5 / fps};
    CHECK(classify_window(onsets, fps, 30) == WindowLabel::onset);
    CHECK(classify_window(onsets, fps, 29) == WindowLabel::near_onset);
    CHECK(classify_window(onsets, fps, 31) == WindowLabel::near_onset);
    CHECK(classify_window(onsets, fps, 28) == WindowLabel::non_onset);
    CHECK(classify_window(onsets, fps, 32) == WindowLabel::non_onset);

    // onsets at frames 30 and 32: the frame between them stays near_onset
    std::vector<double> pair = {30.5 / fps, 32.5 / fps};
    CHECK(classify_window(pair, fps, 31) == WindowLabel::near_onset);
    CHECK(classify_window(pair, fps, 30) == WindowLabel::onset);
    CHECK(classify_window(pair, fps, 32) == WindowLabel::onset);

    // a ref frame that is an onset is never reported near
    for (std::int64_t k = 25; k < 38; ++k) {
        if (is_onset_frame(pair, fps, k)) {
            CHECK(classify_window(pair, fps, k) == WindowLabel::onset);
        }
    }
}

TEST_CASE("soft targets per label") {
    CHECK(target_for(WindowLabel::onset) == std::array<float, 2>{0.0f, 1.0f});
    CHECK(target_for(WindowLabel::near_onset) == std::array<float, 2>{0.75f, 0.25f});
    CHECK(target_for(WindowLabel::non_onset) == std::array<float, 2>{1.0f, 0.0f});
}

TEST_CASE("load_annotations reads a valid manifest") {
    TempDir tmp;
    const std::string manifest = write_annotations(tmp, {10.4 / 30.0, 20.5 / 30.0});
    const Dataset ds = load_annotations(manifest);
    REQUIRE(ds.subjects.size() == 1);
    REQUIRE(ds.videos.size() == 1);
    const VideoRecord& v = ds.video("v0");
    CHECK(v.subject_id == "s0");
    CHECK(v.fps == 30.0);
    CHECK(v.duration_frames == 30);
    REQUIRE(v.onsets.size() == 2);
    CHECK(v.rois.size() == 2);
    CHECK(v.rois.count("mouth") == 1);
    CHECK(v.rois.at("mouth").size() == 30);
    CHECK(ds.subject("s0").video_indices == std::vector<std::size_t>{0});
    CHECK_THROWS_AS(ds.video("nope"), DataError);
    CHECK_THROWS_AS(ds.subject("nope"), DataError);
}

TEST_CASE("load_annotations rejects onsets at or past the video end") {
    TempDir tmp;
    // duration 30 at fps 30: valid times live in [0, 1)
    write_annotations(tmp, {0.5, 1.0});
    CHECK_THROWS_WITH_AS(load_annotations(tmp.path("manifest.json")),
                         doctest::Contains("onsets.csv:3"), DataError);
    write_file(tmp.path("onsets.csv"), onsets_csv("v0", {0.5}));
    CHECK_NOTHROW(load_annotations(tmp.path("manifest.json")));
}

TEST_CASE("load_annotations rejects unsorted and duplicate onsets") {
    TempDir tmp;
    write_annotations(tmp, {0.5, 0.4});
    CHECK_THROWS_WITH_AS(load_annotations(tmp.path("manifest.json")),
                         doctest::Contains("not strictly increasing"), DataError);
    write_annotations(tmp, {0.5, 0.5});
    CHECK_THROWS_WITH_AS(load_annotations(tmp.path("manifest.json")), doctest::Contains("v0"), DataError);
}

TEST_CASE("load_annotations names the offending file and line") {
    TempDir tmp;
    write_annotations(tmp, {0.5, 0.9});
    // corrupt line 3 of the onsets file
    write_file(tmp.path("onsets.csv"), "video_id,onset_sec\nv0,0.5\nv0,oops\n");
    try {
        load_annotations(tmp.path("manifest.json"));
        FAIL("expected DataError");
    } catch (const DataError& e) {
        const std::string msg = e.what();
        CHECK(msg.find("v0") != std::string::npos);
        CHECK(msg.find("onsets.csv:3") != std::string::npos);
    }
}

TEST_CASE("load_annotations rejects duplicate and missing ROI rows") {
    TempDir tmp;
    write_annotations(tmp, {0.5});
    const RoiBox box{10, 10, 8, 8, 0};
    std::string good = rois_csv("v0", 30, {{"mouth", box}});

    SUBCASE("duplicate (frame, roi) row") {
        write_file(tmp.path("rois.csv"), good + "v0,7,mouth,10,10,8,8,0\n");
        CHECK_THROWS_WITH_AS(load_annotations(tmp.path("manifest.json")),
                             doctest::Contains("duplicate box for frame 7"), DataError);
    }
    SUBCASE("missing frame row") {
        // drop the line for frame 13 (header + 13 rows precede it)
        std::vector<std::string> lines;
        std::string cur;
        for (char c : good) {
            if (c == '\n') {
                lines.push_back(cur);
                cur.clear();
            } else {
                cur += c;
            }
        }
        std::string text;
        for (std::size_t i = 0; i < lines.size(); ++i) {
            if (i != 14) {
                text += lines[i] + "\n";
            }
        }
        write_file(tmp.path("rois.csv"), text);
        CHECK_THROWS_WITH_AS(load_annotations(tmp.path("manifest.json")),
                             doctest::Contains("missing a box for frame 13"), DataError);
    }
    SUBCASE("row for a different video") {
        write_file(tmp.path("rois.csv"), "video_id,frame_idx,roi_name,cx,cy,w,h,angle_deg\nv9,0,mouth,1,1,2,2,0\n");
        CHECK_THROWS_WITH_AS(load_annotations(tmp.path("manifest.json")),
                             doctest::Contains("belongs to video 'v9'"), DataError);
    }
    SUBCASE("bad header") {
        write_file(tmp.path("rois.csv"), "video,frame\nv0,0\n");
        CHECK_THROWS_WITH_AS(load_annotations(tmp.path("manifest.json")), doctest::Contains("header"),
                             DataError);
    }
}

TEST_CASE("load_annotations rejects malformed manifests") {
    TempDir tmp;
    write_annotations(tmp, {0.5});

    SUBCASE("missing file") {
        CHECK_THROWS_AS(load_annotations(tmp.path("nope.json")), DataError);
    }
    SUBCASE("invalid json") {
        write_file(tmp.path("manifest.json"), "{nope");
        CHECK_THROWS_WITH_AS(load_annotations(tmp.path("manifest.json")), doctest::Contains("manifest"),
                             DataError);
    }
    SUBCASE("missing field") {
        write_file(tmp.path("manifest.json"),
                   "{\"subjects\": [{\"id\": \"s0\", \"videos\": [{\"video_id\": \"v0\"}]}]}");
        CHECK_THROWS_AS(load_annotations(tmp.path("manifest.json")), DataError);
    }
    SUBCASE("duplicate video id") {
        std::string two = std::string("{\"subjects\": [{\"id\": \"s0\", \"videos\": [") +
                          "{\"video_id\": \"v0\", \"fps\": 30, \"duration_frames\": 30, \"frames_dir\": "
                          "\"frames\", \"onsets_csv\": \"onsets.csv\", \"rois_csv\": \"rois.csv\"}," +
                          "{\"video_id\": \"v0\", \"fps\": 30, \"duration_frames\": 30, \"frames_dir\": "
                          "\"frames\", \"onsets_csv\": \"onsets.csv\", \"rois_csv\": \"rois.csv\"}]}]}";
        write_file(tmp.path("manifest.json"), two);
        CHECK_THROWS_WITH_AS(load_annotations(tmp.path("manifest.json")),
                             doctest::Contains("duplicate video id"), DataError);
    }
}

TEST_CASE("frame store caches decoded frames and tracks subjects") {
    TempDir tmp;
    const Dataset ds = pattern_dataset(tmp, 12, 16, 16, {}, {{"mouth", RoiBox{8, 8, 8, 8, 0}}});
    FrameStore store(ds);
    CHECK(store.subjects_read().empty());
    const Image& a = store.frame(0, 3);
    CHECK(a.height == 16);
    CHECK(a.at(2, 5, 1) == pattern(3, 2, 5, 1));
    CHECK(store.cached_frames() == 1);
    store.frame(0, 3);
    CHECK(store.cached_frames() == 1);
    CHECK(store.subjects_read() == std::set<std::string>{"s0"});
    CHECK_THROWS_AS(store.frame(0, 12), DataError);
    CHECK_THROWS_AS(store.frame(0, -1), DataError);
    CHECK_THROWS_AS(store.frame(5, 0), DataError);
}

TEST_CASE("extraction of a full-frame box at the frame size is the identity") {
    TempDir tmp;
    const Dataset ds = pattern_dataset(tmp, 12, 16, 16, {}, {{"mouth", RoiBox{8, 8, 16, 16, 0}}});
    FrameStore store(ds);
    ExtractStats stats;
    const Tensor<float> out = extract_window(store, 0, {"mouth"}, 6, 0, 0, 16, 16, &stats);
    REQUIRE(out.shape() == Shape{1, 3, 9, 16, 16});
    for (std::int64_t t = 0; t < 9; ++t) {
        const std::int64_t frame = 6 - window_frames_before + t;
        for (std::int64_t c = 0; c < 3; ++c) {
            for (std::int64_t y = 0; y < 16; ++y) {
                for (std::int64_t x = 0; x < 16; ++x) {
                    const float expect = static_cast<float>(pattern(frame, y, x, c)) / 255.0f;
                    const float got = out[((c * 9 + t) * 16 + y) * 16 + x];
                    CHECK(got == doctest::Approx(expect).epsilon(1e-6));
                }
            }
        }
    }
    CHECK(stats.boxes_sampled == 9);
    CHECK(stats.boxes_clamped == 0);
}

TEST_CASE("extraction of a full-frame box downscales like a plain bilinear resize") {
    TempDir tmp;
    const Dataset ds = pattern_dataset(tmp, 12, 32, 32, {}, {{"mouth", RoiBox{16, 16, 32, 32, 0}}});
    FrameStore store(ds);
    const Tensor<float> out = extract_window(store, 0, {"mouth"}, 6, 0, 0, 16, 16);
    // independent oracle: sample the frame at (u + 0.5) * scale with bilinear weights
    const Image& img = store.frame(0, 6);
    for (std::int64_t y = 0; y < 16; ++y) {
        for (std::int64_t x = 0; x < 16; ++x) {
            const double px = (static_cast<double>(x) + 0.5) * 2.0 - 0.5;
            const double py = (static_cast<double>(y) + 0.5) * 2.0 - 0.5;
            const std::int64_t x0 = static_cast<std::int64_t>(std::floor(px));
            const std::int64_t y0 = static_cast<std::int64_t>(std::floor(py));
            const double tx = px - static_cast<double>(x0);
            const double ty = py - static_cast<double>(y0);
            for (std::int64_t c = 0; c < 3; ++c) {
                const double v00 = img.at(y0, x0, c);
                const double v01 = img.at(y0, std::min<std::int64_t>(x0 + 1, 31), c);
                const double v10 = img.at(std::min<std::int64_t>(y0 + 1, 31), x0, c);
                const double v11 = img.at(std::min<std::int64_t>(y0 + 1, 31), std::min<std::int64_t>(x0 + 1, 31), c);
                const double expect = ((1 - ty) * ((1 - tx) * v00 + tx * v01) + ty * ((1 - tx) * v10 + tx * v11)) / 255.0;
                const float got = out[((c * 9 + 5) * 16 + y) * 16 + x];
                CHECK(got == doctest::Approx(expect).epsilon(1e-5));
            }
        }
    }
}

TEST_CASE("extraction is deterministic for a fixed jitter") {
    TempDir tmp;
    const Dataset ds = pattern_dataset(tmp, 12, 24, 24, {}, {{"mouth", RoiBox{12, 12, 10, 10, 30}}});
    FrameStore store(ds);
    const Tensor<float> a = extract_window(store, 0, {"mouth"}, 6, 1.25, -0.5, 8, 8);
    const Tensor<float> b = extract_window(store, 0, {"mouth"}, 6, 1.25, -0.5, 8, 8);
    REQUIRE(a.size() == b.size());
    CHECK(std::memcmp(a.data(), b.data(), sizeof(float) * static_cast<std::size_t>(a.size())) == 0);
}

TEST_CASE("integer jitter on an identity extraction shifts by whole pixels") {
    TempDir tmp;
    const Dataset ds = pattern_dataset(tmp, 12, 16, 16, {}, {{"mouth", RoiBox{8, 8, 16, 16, 0}}});
    FrameStore store(ds);
    const Tensor<float> shifted = extract_window(store, 0, {"mouth"}, 6, 1, 0, 16, 16);
    for (std::int64_t c = 0; c < 3; ++c) {
        for (std::int64_t y = 0; y < 16; ++y) {
            for (std::int64_t x = 0; x < 16; ++x) {
                const std::int64_t src = std::min<std::int64_t>(x + 1, 15);
                const float expect = static_cast<float>(pattern(6, y, src, c)) / 255.0f;
                CHECK(shifted[((c * 9 + 5) * 16 + y) * 16 + x] == doctest::Approx(expect).epsilon(1e-6));
            }
        }
    }
}

TEST_CASE("a 90 degree box equals the rotated 0 degree extraction") {
    TempDir tmp;
    const std::vector<std::pair<std::string, RoiBox>> rois = {{"a", RoiBox{20, 20, 12, 12, 0}},
                                                              {"b", RoiBox{20, 20, 12, 12, 90}}};
    const Dataset ds = pattern_dataset(tmp, 12, 40, 40, {}, rois);
    FrameStore store(ds);
    const std::int64_t out = 8;
    const Tensor<float> A = extract_window(store, 0, {"a"}, 6, 0, 0, out, out);
    const Tensor<float> B = extract_window(store, 0, {"b"}, 6, 0, 0, out, out);
    for (std::int64_t c = 0; c < 3; ++c) {
        for (std::int64_t t = 0; t < 9; ++t) {
            for (std::int64_t r = 0; r < out; ++r) {
                for (std::int64_t col = 0; col < out; ++col) {
                    const float b = B[((c * 9 + t) * out + r) * out + col];
                    const float a = A[((c * 9 + t) * out + col) * out + (out - 1 - r)];
                    CHECK(std::abs(b - a) <= 2.0f / 255.0f);
                }
            }
        }
    }
}

TEST_CASE("boxes leaving the frame clamp and count instead of failing") {
    TempDir tmp;
    const std::vector<std::pair<std::string, RoiBox>> rois = {{"edge", RoiBox{0, 0, 12, 12, 15}},
                                                              {"inside", RoiBox{12, 12, 8, 8, 0}}};
    const Dataset ds = pattern_dataset(tmp, 12, 24, 24, {}, rois);
    FrameStore store(ds);
    ExtractStats stats;
    const Tensor<float> out = extract_window(store, 0, {"edge", "inside"}, 6, 0, 0, 8, 8, &stats);
    CHECK(stats.boxes_sampled == 18);
    CHECK(stats.boxes_clamped == 9);  // every "edge" frame clamps, no "inside" frame does
    for (std::int64_t i = 0; i < out.size(); ++i) {
        CHECK(out[i] >= 0.0f);
        CHECK(out[i] <= 1.0f);
    }
}

TEST_CASE("extraction rejects unknown ROIs and out-of-bounds windows") {
    TempDir tmp;
    const Dataset ds = pattern_dataset(tmp, 12, 16, 16, {}, {{"mouth", RoiBox{8, 8, 8, 8, 0}}});
    FrameStore store(ds);
    CHECK_THROWS_WITH_AS(extract_window(store, 0, {"nose"}, 6, 0, 0, 8, 8),
                         doctest::Contains("no ROI track 'nose'"), DataError);
    CHECK_THROWS_AS(extract_window(store, 0, {"mouth"}, 4, 0, 0, 8, 8), DataError);
    CHECK_THROWS_AS(extract_window(store, 0, {"mouth"}, 9, 0, 0, 8, 8), DataError);
    CHECK_NOTHROW(extract_window(store, 0, {"mouth"}, 5, 0, 0, 8, 8));
    CHECK_NOTHROW(extract_window(store, 0, {"mouth"}, 8, 0, 0, 8, 8));
}

TEST_CASE("augment offsets: fixed head, uniform tail") {
    Rng rng(77);
    const auto one = augment_offsets(rng, 4.0, 1);
    REQUIRE(one.size() == 1);
    CHECK(one[0] == std::pair<double, double>{0.0, 0.0});

    Rng r1 = Rng(9).substream("aug");
    Rng r2 = Rng(9).substream("aug");
    CHECK(augment_offsets(r1, 4.0, 4) == augment_offsets(r2, 4.0, 4));

    Rng r3(123);
    double sx = 0, sy = 0;
    const std::int64_t trials = 10000;
    for (std::int64_t i = 0; i < trials; ++i) {
        const auto offs = augment_offsets(r3, 4.0, 2);
        CHECK(std::abs(offs[1].first) <= 4.0);
        CHECK(std::abs(offs[1].second) <= 4.0);
        sx += offs[1].first;
        sy += offs[1].second;
    }
    // var of U(-4,4) is 16/3; 3 sigma of the mean over 10^4 draws
    const double bound = 3.0 * std::sqrt(16.0 / 3.0 / static_cast<double>(trials));
    CHECK(std::abs(sx / static_cast<double>(trials)) < bound);
    CHECK(std::abs(sy / static_cast<double>(trials)) < bound);

    CHECK_THROWS_AS(augment_offsets(r3, 4.0, 0), NumericError);
    CHECK_THROWS_AS(augment_offsets(r3, -1.0, 2), NumericError);
}

TEST_CASE("index partitions every in-bounds window and sizes epochs") {
    TempDir tmp;
    // onsets in frames 10 and 20 of a 30-frame video
    const std::string manifest = write_annotations(tmp, {10.4 / 30.0, 20.5 / 30.0});
    const Dataset ds = load_annotations(manifest);
    const SampleIndex index = build_index(ds, {"s0"}, 3);

    CHECK(index.onset_pool.size() == 2);
    CHECK(index.near_pool.size() == 4);
    // refs 5..26 inclusive are in bounds for duration 30
    CHECK(index.onset_pool.size() + index.near_pool.size() + index.non_pool.size() == 22);
    CHECK(index.epoch_size == 4 * 2 * 3);
    CHECK(index.batches_per_epoch == index.epoch_size / batch_size);

    std::set<std::int64_t> refs;
    for (const auto* pool : {&index.onset_pool, &index.near_pool, &index.non_pool}) {
        for (const SampleWindow& w : *pool) {
            CHECK(window_in_bounds(w.ref_frame, 30));
            CHECK(refs.insert(w.ref_frame).second);  // pools are disjoint
        }
    }
    CHECK(refs.size() == 22);

    CHECK_THROWS_AS(build_index(ds, {}, 4), DataError);
    CHECK_THROWS_AS(build_index(ds, {"s0", "s0"}, 4), DataError);
    CHECK_THROWS_AS(build_index(ds, {"ghost"}, 4), DataError);
    CHECK_THROWS_AS(build_index(ds, {"s0"}, 0), ConfigError);
}

TEST_CASE("index rejects a subject with no videos") {
    TempDir tmp;
    write_file(tmp.path("manifest.json"),
               "{\"subjects\": [{\"id\": \"empty\", \"videos\": []}]}");
    const Dataset ds = load_annotations(tmp.path("manifest.json"));
    CHECK_THROWS_WITH_AS(build_index(ds, {"empty"}, 4), doctest::Contains("no videos"), DataError);
}

TEST_CASE("sampler draws balanced batches with valid targets") {
    TempDir tmp;
    const std::string manifest = write_annotations(tmp, {10.4 / 30.0, 20.5 / 30.0});
    const Dataset ds = load_annotations(manifest);
    const SampleIndex index = build_index(ds, {"s0"}, 4);
    BalancedSampler sampler(index, 4.0, 2024);

    for (int b = 0; b < 50; ++b) {
        const auto plan = sampler.next_batch();
        REQUIRE(plan.samples.size() == static_cast<std::size_t>(batch_size));
        std::map<WindowLabel, int> counts;
        for (const auto& s : plan.samples) {
            counts[s.window.label]++;
            CHECK(std::abs(s.dx) <= 4.0);
            CHECK(std::abs(s.dy) <= 4.0);
        }
        CHECK(counts[WindowLabel::non_onset] == batch_non);
        CHECK(counts[WindowLabel::onset] == batch_onset);
        CHECK(counts[WindowLabel::near_onset] == batch_near);
        for (std::int64_t i = 0; i < batch_size; ++i) {
            const float t0 = plan.targets[i * 2 + 0];
            const float t1 = plan.targets[i * 2 + 1];
            CHECK(t0 + t1 == doctest::Approx(1.0f));
            const auto expect = target_for(plan.samples[static_cast<std::size_t>(i)].window.label);
            CHECK(t0 == expect[0]);
            CHECK(t1 == expect[1]);
        }
    }
    CHECK(sampler.batches_drawn() == 50);
}

TEST_CASE("sampler cycles pools without replacement and refreshes jitter") {
    TempDir tmp;
    const std::string manifest = write_annotations(tmp, {10.4 / 30.0, 20.5 / 30.0});
    const Dataset ds = load_annotations(manifest);
    const SampleIndex index = build_index(ds, {"s0"}, 4);  // onset pool: 2 windows x 4 variants
    BalancedSampler sampler(index, 4.0, 31);

    // The onset pool holds 2 windows x 4 variants = 8 entries per cycle. Each
    // batch consumes 6, so 4 batches consume exactly 3 full cycles and the
    // multiset of draws over that span is pinned even though the batch
    // shuffle scrambles the order.
    const auto group_stats = [&]() {
        std::map<std::int64_t, int> per_window;
        int centered = 0;
        std::vector<std::pair<double, double>> jitters;
        for (int b = 0; b < 4; ++b) {
            const auto plan = sampler.next_batch();
            for (const auto& s : plan.samples) {
                if (s.window.label != WindowLabel::onset) {
                    continue;
                }
                per_window[s.window.ref_frame]++;
                if (s.dx == 0 && s.dy == 0) {
                    ++centered;
                } else {
                    jitters.emplace_back(s.dx, s.dy);
                }
            }
        }
        return std::tuple(per_window, centered, jitters);
    };

    auto [w1, c1, j1] = group_stats();
    auto [w2, c2, j2] = group_stats();
    // 3 cycles cover each window 3 * da_factor times, one centered variant each
    CHECK(w1 == std::map<std::int64_t, int>{{10, 12}, {20, 12}});
    CHECK(w2 == std::map<std::int64_t, int>{{10, 12}, {20, 12}});
    CHECK(c1 == 6);
    CHECK(c2 == 6);
    // recycled variants draw fresh offsets
    std::sort(j1.begin(), j1.end());
    std::sort(j2.begin(), j2.end());
    CHECK(j1 != j2);
}

TEST_CASE("sampler is deterministic for a fixed seed") {
    TempDir tmp;
    const std::string manifest = write_annotations(tmp, {10.4 / 30.0, 20.5 / 30.0});
    const Dataset ds = load_annotations(manifest);
    const SampleIndex index = build_index(ds, {"s0"}, 4);
    BalancedSampler a(index, 4.0, 99);
    BalancedSampler b(index, 4.0, 99);
    for (int i = 0; i < 10; ++i) {
        const auto pa = a.next_batch();
        const auto pb = b.next_batch();
        for (std::size_t j = 0; j < pa.samples.size(); ++j) {
            CHECK(pa.samples[j].window.video_index == pb.samples[j].window.video_index);
            CHECK(pa.samples[j].window.ref_frame == pb.samples[j].window.ref_frame);
            CHECK(pa.samples[j].dx == pb.samples[j].dx);
            CHECK(pa.samples[j].dy == pb.samples[j].dy);
        }
    }
    BalancedSampler c(index, 4.0, 100);
    bool any_diff = false;
    BalancedSampler d(index, 4.0, 99);
    for (int i = 0; i < 10 && !any_diff; ++i) {
        const auto pc = c.next_batch();
        const auto pd = d.next_batch();
        for (std::size_t j = 0; j < pc.samples.size(); ++j) {
            if (pc.samples[j].window.ref_frame != pd.samples[j].window.ref_frame ||
                pc.samples[j].dx != pd.samples[j].dx) {
                any_diff = true;
            }
        }
    }
    CHECK(any_diff);
}

TEST_CASE("sampler draw frequencies stay near uniform within each pool") {
    TempDir tmp;
    const std::string manifest = write_annotations(tmp, {10.4 / 30.0, 20.5 / 30.0});
    const Dataset ds = load_annotations(manifest);
    const SampleIndex index = build_index(ds, {"s0"}, 4);
    BalancedSampler sampler(index, 4.0, 7);

    std::map<std::int64_t, std::int64_t> onset_counts;
    const std::int64_t batches = 1000;
    for (std::int64_t b = 0; b < batches; ++b) {
        const auto plan = sampler.next_batch();
        for (const auto& s : plan.samples) {
            if (s.window.label == WindowLabel::onset) {
                onset_counts[s.window.ref_frame]++;
            }
        }
    }
    const double total = static_cast<double>(batches * batch_onset);
    const double p = 1.0 / static_cast<double>(index.onset_pool.size());
    const double sigma = std::sqrt(total * p * (1 - p));
    for (const auto& [ref, count] : onset_counts) {
        CHECK(std::abs(static_cast<double>(count) - total * p) <= 3.0 * sigma);
    }
}

TEST_CASE("sampler rejects an empty pool by name") {
    TempDir tmp;
    const std::string manifest = write_annotations(tmp, {});  // no onsets at all
    const Dataset ds = load_annotations(manifest);
    const SampleIndex index = build_index(ds, {"s0"}, 4);
    CHECK(index.onset_pool.empty());
    CHECK(index.epoch_size == 0);
    CHECK_THROWS_WITH_AS(BalancedSampler(index, 4.0, 1), doctest::Contains("onset"), DataError);
}

TEST_CASE("materialized batches stack extraction outputs per stream") {
    TempDir tmp;
    const std::vector<std::pair<std::string, RoiBox>> rois = {{"mouth", RoiBox{10, 10, 8, 8, 0}},
                                                              {"clarinet_tip", RoiBox{14, 14, 8, 8, 45}}};
    const Dataset ds = pattern_dataset(tmp, 30, 24, 24, {10.4 / 30.0, 20.5 / 30.0}, rois);
    const SampleIndex index = build_index(ds, {"s0"}, 2);
    BalancedSampler sampler(index, 2.0, 5);
    FrameStore store(ds);

    const auto plan = sampler.next_batch();
    const std::vector<std::string> names = {"mouth", "clarinet_tip"};
    const auto streams = materialize_batch(store, plan.samples, names, 8, 8);
    REQUIRE(streams.size() == 2);
    for (const auto& s : streams) {
        CHECK(s.shape() == Shape{batch_size, 3, 9, 8, 8});
        for (std::int64_t i = 0; i < s.size(); ++i) {
            CHECK(s[i] >= 0.0f);
            CHECK(s[i] <= 1.0f);
        }
    }
    // row 3 must equal a direct extraction with the same draw
    const auto& d = plan.samples[3];
    const Tensor<float> direct =
        extract_window(store, d.window.video_index, names, d.window.ref_frame, d.dx, d.dy, 8, 8);
    const std::size_t slab = 3 * 9 * 8 * 8;
    for (std::size_t s = 0; s < 2; ++s) {
        CHECK(std::memcmp(streams[s].data() + 3 * slab, direct.data() + s * slab, slab * sizeof(float)) == 0);
    }
}

TEST_CASE("nine-fold splits rotate test and validation subjects") {
    std::vector<std::string> ids;
    for (int i = 0; i < 9; ++i) {
        ids.push_back("p" + std::to_string(i));
    }
    const auto plans = make_splits(ids);
    REQUIRE(plans.size() == 9);
    std::map<std::string, int> test_counts;
    for (std::size_t i = 0; i < 9; ++i) {
        const SplitPlan& p = plans[i];
        CHECK(p.split_id == static_cast<std::int64_t>(i));
        CHECK(p.test_subject == ids[i]);
        CHECK(p.validation_subject == ids[(i + 1) % 9]);
        CHECK(p.train_subjects.size() == 7);
        test_counts[p.test_subject]++;
        for (const std::string& t : p.train_subjects) {
            CHECK(t != p.test_subject);
            CHECK(t != p.validation_subject);
        }
    }
    for (const auto& [id, n] : test_counts) {
        CHECK(n == 1);
    }
    CHECK_THROWS_WITH_AS(make_splits({"a", "b"}), doctest::Contains("9"), DataError);
    ids[3] = ids[4];
    CHECK_THROWS_WITH_AS(make_splits(ids), doctest::Contains("distinct"), DataError);
}

TEST_CASE("synthetic generator produces a loadable dataset with the right density") {
    TempDir tmp;
    SynthSpec spec;
    spec.subjects = 1;
    spec.videos_per_subject = 1;
    spec.duration_sec = 30.0;
    spec.frame_height = 48;
    spec.frame_width = 48;
    spec.roi_names = {"mouth", "clarinet_tip"};
    spec.cue_rois = {"mouth", "clarinet_tip"};
    const std::string manifest = generate_synthetic(spec, 42, tmp.path("data"));
    const Dataset ds = load_annotations(manifest);
    REQUIRE(ds.videos.size() == 1);
    const VideoRecord& v = ds.videos[0];
    CHECK(v.duration_frames == 900);
    CHECK(v.rois.size() == 2);

    // gaps are Uniform[10, 20] frames, so ~60 onsets in 900 frames
    const std::size_t n = v.onsets.size();
    CHECK(n >= 45);
    CHECK(n <= 75);
    const double first = v.onsets.front() * v.fps;
    const double last = v.onsets.back() * v.fps;
    const double mean_gap = (last - first) / static_cast<double>(n - 1);
    CHECK(mean_gap > 13.0);
    CHECK(mean_gap < 17.0);
    for (std::size_t i = 1; i < n; ++i) {
        const double gap = (v.onsets[i] - v.onsets[i - 1]) * v.fps;
        CHECK(gap > 9.0);
        CHECK(gap < 22.0);
    }
}

TEST_CASE("synthetic onset cue brightens the marked ROIs around the onset") {
    TempDir tmp;
    SynthSpec spec;
    spec.subjects = 1;
    spec.videos_per_subject = 1;
    spec.duration_sec = 5.0;
    spec.frame_height = 48;
    spec.frame_width = 48;
    spec.roi_names = {"mouth", "clarinet_tip"};
    spec.cue_rois = {"mouth"};
    const std::string manifest = generate_synthetic(spec, 11, tmp.path("data"));
    const Dataset ds = load_annotations(manifest);
    const VideoRecord& v = ds.videos[0];
    REQUIRE(v.onsets.size() >= 3);
    FrameStore store(ds);

    const auto mean_ref_frame = [&](std::int64_t ref, const std::string& roi) {
        const Tensor<float> win = extract_window(store, 0, {roi}, ref, 0, 0, 16, 16);
        double sum = 0;
        // channel planes of the reference frame (t index 5)
        for (std::int64_t c = 0; c < 3; ++c) {
            for (std::int64_t i = 0; i < 256; ++i) {
                sum += win[(c * 9 + 5) * 256 + i];
            }
        }
        return sum / (3 * 256);
    };

    const std::int64_t onset_frame = static_cast<std::int64_t>(std::floor(v.onsets[1] * v.fps));
    const std::int64_t non_frame = onset_frame + 5;
    REQUIRE(classify_window(v.onsets, v.fps, onset_frame) == WindowLabel::onset);
    REQUIRE(classify_window(v.onsets, v.fps, non_frame) == WindowLabel::non_onset);

    const double cue_on = mean_ref_frame(onset_frame, "mouth");
    const double cue_off = mean_ref_frame(non_frame, "mouth");
    CHECK(cue_on > cue_off + 0.02);

    // the unmarked ROI carries no pulse
    const double plain_on = mean_ref_frame(onset_frame, "clarinet_tip");
    const double plain_off = mean_ref_frame(non_frame, "clarinet_tip");
    CHECK(std::abs(plain_on - plain_off) < 0.02);
}

TEST_CASE("synthetic generation is bitwise reproducible per seed") {
    TempDir tmp;
    SynthSpec spec;
    spec.subjects = 1;
    spec.videos_per_subject = 1;
    spec.duration_sec = 3.0;
    spec.frame_height = 32;
    spec.frame_width = 32;
    spec.roi_names = {"mouth", "clarinet_tip"};
    generate_synthetic(spec, 7, tmp.path("a"));
    generate_synthetic(spec, 7, tmp.path("b"));
    generate_synthetic(spec, 8, tmp.path("c"));

    const auto read_bytes = [](const fs::path& p) {
        std::ifstream in(p, std::ios::binary);
        REQUIRE(in.good());
        return std::string((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    };

    std::size_t compared = 0;
    bool c_differs = false;
    for (const auto& entry : fs::recursive_directory_iterator(tmp.path("a"))) {
        if (!entry.is_regular_file()) {
            continue;
        }
        const fs::path rel = fs::relative(entry.path(), tmp.path("a"));
        const std::string a = read_bytes(entry.path());
        const std::string b = read_bytes(fs::path(tmp.path("b")) / rel);
        CHECK(a == b);
        ++compared;
        const fs::path c_path = fs::path(tmp.path("c")) / rel;
        if (!fs::exists(c_path) || read_bytes(c_path) != a) {
            c_differs = true;
        }
    }
    CHECK(compared > 90);  // 90 frames + CSVs + manifest
    CHECK(c_differs);
}

TEST_CASE("synthetic manifest scales to the full nine-subject layout") {
    TempDir tmp;
    SynthSpec spec;
    spec.subjects = 9;
    spec.videos_per_subject = 6;
    spec.duration_sec = 3.0;
    spec.frame_height = 32;
    spec.frame_width = 32;
    spec.roi_names = {"mouth", "clarinet_tip"};
    const std::string manifest = generate_synthetic(spec, 1, tmp.path("data"));
    const Dataset ds = load_annotations(manifest);
    CHECK(ds.subjects.size() == 9);
    CHECK(ds.videos.size() == 54);
    std::set<std::string> subject_ids;
    for (const auto& s : ds.subjects) {
        subject_ids.insert(s.id);
        CHECK(s.video_indices.size() == 6);
    }
    CHECK(subject_ids.size() == 9);

    // the produced ids plug straight into the nine-fold split plan
    std::vector<std::string> ids(subject_ids.begin(), subject_ids.end());
    const auto plans = make_splits(ids);
    CHECK(plans.size() == 9);
}

TEST_CASE("synthetic generator validates its spec") {
    TempDir tmp;
    SynthSpec spec;
    spec.subjects = 0;
    CHECK_THROWS_AS(generate_synthetic(spec, 1, tmp.path("x")), ConfigError);
    spec.subjects = 1;
    spec.cue_rois = {"nope"};
    CHECK_THROWS_AS(generate_synthetic(spec, 1, tmp.path("x")), ConfigError);
    spec.cue_rois = {"mouth"};
    spec.duration_sec = 0.5;  // shorter than the gap range allows
    CHECK_THROWS_AS(generate_synthetic(spec, 1, tmp.path("x")), ConfigError);
}
