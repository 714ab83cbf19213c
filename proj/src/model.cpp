#include "onsetnet/model.hpp"

#include <charconv>
#include <map>
#include <sstream>

namespace onsetnet {

namespace {

void fail(const std::string& msg) { throw ConfigError("model config: " + msg); }

std::string join_i64(const std::vector<std::int64_t>& v) {
    std::string out;
    for (std::size_t i = 0; i < v.size(); ++i) {
        if (i) out += ',';
        out += std::to_string(v[i]);
    }
    return out;
}

std::string fmt_double(double v) {
    char buf[64];
    auto res = std::to_chars(buf, buf + sizeof(buf), v);
    return std::string(buf, res.ptr);
}

std::vector<std::string> split(const std::string& s, char sep) {
    std::vector<std::string> out;
    std::size_t start = 0;
    while (true) {
        const std::size_t pos = s.find(sep, start);
        if (pos == std::string::npos) {
            out.push_back(s.substr(start));
            return out;
        }
        out.push_back(s.substr(start, pos - start));
        start = pos + 1;
    }
}

std::int64_t parse_i64(const std::string& s, const std::string& key) {
    std::int64_t v = 0;
    const auto res = std::from_chars(s.data(), s.data() + s.size(), v);
    if (res.ec != std::errc{} || res.ptr != s.data() + s.size())
        throw DataError("config: bad integer for " + key + ": '" + s + "'");
    return v;
}

double parse_f64(const std::string& s, const std::string& key) {
    try {
        std::size_t used = 0;
        const double v = std::stod(s, &used);
        if (used != s.size()) throw std::invalid_argument(s);
        return v;
    } catch (const std::exception&) {
        throw DataError("config: bad real for " + key + ": '" + s + "'");
    }
}

std::vector<std::int64_t> parse_i64_list(const std::string& s, const std::string& key) {
    std::vector<std::int64_t> out;
    for (const auto& part : split(s, ',')) out.push_back(parse_i64(part, key));
    return out;
}

}  // namespace

ShapeTrace validate_config(const ModelConfig& config) {
    if (config.roi_names.empty()) fail("needs at least one ROI stream");
    for (const auto& name : config.roi_names) {
        if (name.empty()) fail("empty ROI name");
        for (char c : name) {
            if (!(std::islower(static_cast<unsigned char>(c)) || std::isdigit(static_cast<unsigned char>(c)) ||
                  c == '_'))
                fail("ROI name '" + name + "' may only use lowercase letters, digits and underscores");
        }
        if (std::count(config.roi_names.begin(), config.roi_names.end(), name) != 1)
            fail("duplicate ROI name '" + name + "'");
    }
    if (config.input_frames < 1) fail("input_frames must be >= 1");
    if (config.roi_height < 1 || config.roi_width < 1) fail("roi pixels must be >= 1");
    if (config.channels_in < 1) fail("channels_in must be >= 1");
    const std::size_t L = 5;
    if (config.conv_channels.size() != L || config.temporal_kernels.size() != L ||
        config.spatial_kernels.size() != L)
        fail("conv_channels, temporal_kernels and spatial_kernels each need exactly 5 entries");
    for (std::size_t l = 0; l < L; ++l) {
        if (config.conv_channels[l] < 1) fail("conv_channels must be >= 1");
        if (config.temporal_kernels[l] < 1) fail("temporal_kernels must be >= 1");
        if (config.spatial_kernels[l] < 1 || config.spatial_kernels[l] % 2 == 0)
            fail("spatial_kernels must be odd so padding keeps the frame size");
    }
    for (auto idx : config.pool_after) {
        if (idx < 1 || idx > static_cast<std::int64_t>(L)) fail("pool_after indices must be in 1..5");
    }
    if (!(config.dropout_rate >= 0.0 && config.dropout_rate < 1.0)) fail("dropout_rate must be in [0,1)");
    if (!(config.bn_momentum > 0.0 && config.bn_momentum < 1.0)) fail("bn_momentum must be in (0,1)");
    if (!(config.bn_epsilon > 0.0)) fail("bn_epsilon must be > 0");
    if (config.fc1_width < 1 || config.fc2_width < 1) fail("fc widths must be >= 1");

    ShapeTrace trace;
    trace.t.push_back(config.input_frames);
    trace.h.push_back(config.roi_height);
    trace.w.push_back(config.roi_width);
    std::int64_t t = config.input_frames, h = config.roi_height, w = config.roi_width;
    for (std::size_t l = 0; l < L; ++l) {
        t = t - config.temporal_kernels[l] + 1;
        if (config.pool_after.count(static_cast<std::int64_t>(l) + 1)) {
            if (h % 2 != 0 || w % 2 != 0)
                fail("pooling after layer " + std::to_string(l + 1) + " would split an odd extent " +
                     std::to_string(h) + "x" + std::to_string(w));
            h /= 2;
            w /= 2;
        }
        if (h < 1 || w < 1) fail("spatial extent collapses below 1 at layer " + std::to_string(l + 1));
        trace.t.push_back(t);
        trace.h.push_back(h);
        trace.w.push_back(w);
    }
    if (t != 1) {
        std::string extents;
        for (std::size_t i = 0; i < trace.t.size(); ++i) {
            if (i) extents += "->";
            extents += std::to_string(trace.t[i]);
        }
        fail("temporal kernel schedule " + join_i64(config.temporal_kernels) + " gives frame extents " + extents +
             "; the extent after the last layer must be exactly 1 (kernel extents minus one must sum to " +
             std::to_string(config.input_frames - 1) + ")");
    }
    trace.flat_features = config.conv_channels[L - 1] * h * w;
    return trace;
}

std::string config_to_text(const ModelConfig& config) {
    std::string out;
    out += "roi_names=";
    for (std::size_t i = 0; i < config.roi_names.size(); ++i) {
        if (i) out += ',';
        out += config.roi_names[i];
    }
    out += '\n';
    out += "input_frames=" + std::to_string(config.input_frames) + '\n';
    out += "roi_height=" + std::to_string(config.roi_height) + '\n';
    out += "roi_width=" + std::to_string(config.roi_width) + '\n';
    out += "channels_in=" + std::to_string(config.channels_in) + '\n';
    out += "conv_channels=" + join_i64(config.conv_channels) + '\n';
    out += "temporal_kernels=" + join_i64(config.temporal_kernels) + '\n';
    out += "spatial_kernels=" + join_i64(config.spatial_kernels) + '\n';
    out += "pool_after=" + join_i64(std::vector<std::int64_t>(config.pool_after.begin(), config.pool_after.end())) +
           '\n';
    out += "fc1_width=" + std::to_string(config.fc1_width) + '\n';
    out += "fc2_width=" + std::to_string(config.fc2_width) + '\n';
    out += "dropout_rate=" + fmt_double(config.dropout_rate) + '\n';
    out += "bn_epsilon=" + fmt_double(config.bn_epsilon) + '\n';
    out += "bn_momentum=" + fmt_double(config.bn_momentum) + '\n';
    return out;
}

ModelConfig config_from_text(const std::string& text, std::map<std::string, std::string>* extras) {
    ModelConfig config;
    for (const auto& raw : split(text, '\n')) {
        if (raw.empty()) continue;
        const std::size_t eq = raw.find('=');
        if (eq == std::string::npos) throw DataError("config: line without '=': '" + raw + "'");
        const std::string key = raw.substr(0, eq);
        const std::string value = raw.substr(eq + 1);
        if (key.rfind("meta.", 0) == 0) {
            if (extras) (*extras)[key] = value;
            continue;
        }
        if (key == "roi_names") {
            config.roi_names = split(value, ',');
        } else if (key == "input_frames") {
            config.input_frames = parse_i64(value, key);
        } else if (key == "roi_height") {
            config.roi_height = parse_i64(value, key);
        } else if (key == "roi_width") {
            config.roi_width = parse_i64(value, key);
        } else if (key == "channels_in") {
            config.channels_in = parse_i64(value, key);
        } else if (key == "conv_channels") {
            config.conv_channels = parse_i64_list(value, key);
        } else if (key == "temporal_kernels") {
            config.temporal_kernels = parse_i64_list(value, key);
        } else if (key == "spatial_kernels") {
            config.spatial_kernels = parse_i64_list(value, key);
        } else if (key == "pool_after") {
            config.pool_after.clear();
            if (!value.empty())
                for (auto v : parse_i64_list(value, key)) config.pool_after.insert(v);
        } else if (key == "fc1_width") {
            config.fc1_width = parse_i64(value, key);
        } else if (key == "fc2_width") {
            config.fc2_width = parse_i64(value, key);
        } else if (key == "dropout_rate") {
            config.dropout_rate = parse_f64(value, key);
        } else if (key == "bn_epsilon") {
            config.bn_epsilon = parse_f64(value, key);
        } else if (key == "bn_momentum") {
            config.bn_momentum = parse_f64(value, key);
        } else {
            throw DataError("config: unknown key '" + key + "'");
        }
    }
    return config;
}

ModelConfig config_from_text(const std::string& text) { return config_from_text(text, nullptr); }

std::int64_t parameter_count(const ModelConfig& config) {
    const ShapeTrace trace = validate_config(config);
    const std::int64_t S = static_cast<std::int64_t>(config.roi_names.size());
    std::int64_t per_stream = 0;
    std::int64_t c_in = config.channels_in;
    for (std::size_t l = 0; l < 5; ++l) {
        const std::int64_t f = config.conv_channels[l];
        const std::int64_t ks = config.spatial_kernels[l];
        per_stream += f * c_in * config.temporal_kernels[l] * ks * ks;  // conv weight
        per_stream += f;                                                // gamma
        c_in = f;
    }
    per_stream += trace.flat_features * config.fc1_width + config.fc1_width;
    std::int64_t total = S * per_stream;
    total += S * config.fc1_width * config.fc2_width + config.fc2_width;
    total += config.fc2_width * ModelConfig::output_units;
    return total;
}

// explicit instantiations
template Model<float> build_model<float>(const ModelConfig&, std::uint64_t);
template Model<double> build_model<double>(const ModelConfig&, std::uint64_t);
template ForwardResult<float> model_forward<float>(Model<float>&, const std::vector<Tensor<float>>&, Mode, Rng&,
                                                   ForwardCache<float>*);
template ForwardResult<double> model_forward<double>(Model<double>&, const std::vector<Tensor<double>>&, Mode, Rng&,
                                                     ForwardCache<double>*);
template std::vector<Tensor<float>> model_backward<float>(Model<float>&, const std::vector<Tensor<float>>&,
                                                          const ForwardCache<float>&, const Tensor<float>&);
template std::vector<Tensor<double>> model_backward<double>(Model<double>&, const std::vector<Tensor<double>>&,
                                                            const ForwardCache<double>&, const Tensor<double>&);
template std::vector<ParamRef<float>> parameters<float>(Model<float>&);
template std::vector<ParamRef<double>> parameters<double>(Model<double>&);
template std::vector<ParamRef<float>> state_tensors<float>(Model<float>&);
template std::vector<ParamRef<double>> state_tensors<double>(Model<double>&);

}  // namespace onsetnet
