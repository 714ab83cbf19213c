#include "onsetnet/checkpoint.hpp"

#include <zlib.h>

#include <charconv>
#include <cstring>
#include <fstream>
#include <map>

namespace onsetnet {

namespace {

constexpr char kMagic[4] = {'C', '4', 'S', 'N'};
constexpr std::uint32_t kVersion = 1;
constexpr std::uint32_t kDtypeF32 = 0;

void append_u32(std::string& buf, std::uint32_t v) {
    buf.push_back(static_cast<char>(v & 0xff));
    buf.push_back(static_cast<char>((v >> 8) & 0xff));
    buf.push_back(static_cast<char>((v >> 16) & 0xff));
    buf.push_back(static_cast<char>((v >> 24) & 0xff));
}

void append_f32(std::string& buf, float v) {
    std::uint32_t bits;
    std::memcpy(&bits, &v, 4);
    append_u32(buf, bits);
}

struct Reader {
    const std::string& buf;
    std::size_t pos = 0;

    void need(std::size_t n) const {
        if (pos + n > buf.size()) throw DataError("checkpoint: truncated file");
    }
    std::uint32_t u32() {
        need(4);
        const auto* p = reinterpret_cast<const unsigned char*>(buf.data() + pos);
        pos += 4;
        return static_cast<std::uint32_t>(p[0]) | (static_cast<std::uint32_t>(p[1]) << 8) |
               (static_cast<std::uint32_t>(p[2]) << 16) | (static_cast<std::uint32_t>(p[3]) << 24);
    }
    float f32() {
        const std::uint32_t bits = u32();
        float v;
        std::memcpy(&v, &bits, 4);
        return v;
    }
    std::string bytes(std::size_t n) {
        need(n);
        std::string s = buf.substr(pos, n);
        pos += n;
        return s;
    }
};

std::uint32_t crc_of(const std::string& buf, std::size_t len) {
    return static_cast<std::uint32_t>(
        crc32(0L, reinterpret_cast<const Bytef*>(buf.data()), static_cast<uInt>(len)));
}

std::string fmt_double(double v) {
    char tmp[64];
    auto res = std::to_chars(tmp, tmp + sizeof(tmp), v);
    return std::string(tmp, res.ptr);
}

}  // namespace

void save_checkpoint(Model<float>& model, const std::string& path, const CheckpointMeta& meta) {
    std::string buf;
    buf.append(kMagic, 4);
    append_u32(buf, kVersion);

    std::string config_text = config_to_text(model.config);
    config_text += "meta.epoch=" + std::to_string(meta.epoch) + '\n';
    config_text += "meta.val_f=" + fmt_double(meta.val_f) + '\n';
    append_u32(buf, static_cast<std::uint32_t>(config_text.size()));
    buf += config_text;

    const auto entries = state_tensors(model);
    append_u32(buf, static_cast<std::uint32_t>(entries.size()));
    for (const auto& entry : entries) {
        append_u32(buf, static_cast<std::uint32_t>(entry.name.size()));
        buf += entry.name;
        const auto& t = *entry.tensor;
        append_u32(buf, static_cast<std::uint32_t>(t.rank()));
        for (std::int64_t a = 0; a < t.rank(); ++a)
            append_u32(buf, static_cast<std::uint32_t>(t.extent(static_cast<std::size_t>(a))));
        append_u32(buf, kDtypeF32);
        for (std::int64_t i = 0; i < t.size(); ++i) append_f32(buf, t[i]);
    }
    append_u32(buf, crc_of(buf, buf.size()));

    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("checkpoint: cannot open '" + path + "' for writing");
    out.write(buf.data(), static_cast<std::streamsize>(buf.size()));
    if (!out) throw IoError("checkpoint: short write to '" + path + "'");
}

LoadedCheckpoint load_checkpoint(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("checkpoint: cannot open '" + path + "'");
    std::string buf((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    if (in.bad()) throw IoError("checkpoint: read error on '" + path + "'");

    if (buf.size() < 4 + 4 + 4 + 4 + 4) throw DataError("checkpoint: truncated file");
    if (std::memcmp(buf.data(), kMagic, 4) != 0) throw DataError("checkpoint: bad magic bytes");
    const std::uint32_t stored_crc = Reader{buf, buf.size() - 4}.u32();
    if (crc_of(buf, buf.size() - 4) != stored_crc) throw DataError("checkpoint: crc mismatch");

    Reader r{buf, 4};
    const std::uint32_t version = r.u32();
    if (version != kVersion)
        throw DataError("checkpoint: unsupported version " + std::to_string(version) + ", expected " +
                        std::to_string(kVersion));

    const std::uint32_t config_len = r.u32();
    const std::string config_text = r.bytes(config_len);
    std::map<std::string, std::string> extras;
    const ModelConfig config = config_from_text(config_text, &extras);

    LoadedCheckpoint loaded{build_model<float>(config, 0), CheckpointMeta{}};
    try {
        if (extras.count("meta.epoch")) loaded.meta.epoch = std::stoll(extras.at("meta.epoch"));
        if (extras.count("meta.val_f")) loaded.meta.val_f = std::stod(extras.at("meta.val_f"));
    } catch (const std::exception&) {
        throw DataError("checkpoint: malformed training metadata");
    }

    auto refs = state_tensors(loaded.model);
    std::map<std::string, Tensor<float>*> by_name;
    for (auto& ref : refs) by_name[ref.name] = ref.tensor;

    const std::uint32_t count = r.u32();
    if (count != refs.size())
        throw DataError("checkpoint: holds " + std::to_string(count) + " tensors, the embedded config implies " +
                        std::to_string(refs.size()));
    std::map<std::string, bool> seen;
    for (std::uint32_t e = 0; e < count; ++e) {
        const std::uint32_t name_len = r.u32();
        const std::string name = r.bytes(name_len);
        const auto it = by_name.find(name);
        if (it == by_name.end()) throw DataError("checkpoint: unknown tensor '" + name + "'");
        if (seen[name]) throw DataError("checkpoint: duplicate tensor '" + name + "'");
        seen[name] = true;

        const std::uint32_t rank = r.u32();
        Shape shape;
        for (std::uint32_t a = 0; a < rank; ++a) shape.push_back(static_cast<std::int64_t>(r.u32()));
        if (shape != it->second->shape())
            throw DataError("checkpoint: tensor '" + name + "' has shape " + shape_str(shape) +
                            ", the embedded config implies " + shape_str(it->second->shape()));
        const std::uint32_t dtype = r.u32();
        if (dtype != kDtypeF32) throw DataError("checkpoint: unsupported dtype code " + std::to_string(dtype));
        Tensor<float>& t = *it->second;
        for (std::int64_t i = 0; i < t.size(); ++i) t[i] = r.f32();
    }
    if (r.pos != buf.size() - 4) throw DataError("checkpoint: trailing bytes after tensor data");
    return loaded;
}

}  // namespace onsetnet
