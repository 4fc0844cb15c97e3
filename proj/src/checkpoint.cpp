#include "vlprompt/checkpoint.hpp"

#include <json.hpp>

#include <cstring>
#include <fstream>

#include "vlprompt/wire.hpp"

namespace vlp {

namespace {

using json = nlohmann::ordered_json;

constexpr char kMagic[4] = {'M', 'P', 'C', 'K'};
constexpr std::uint32_t kMaxNameLen = 4096;
constexpr std::uint8_t kMaxRank = 8;

class Reader {
public:
    explicit Reader(std::istream& is, const std::string& path) : is_(is), path_(path) {}

    template <class T>
    T read(const char* what) {
        T v{};
        if (!wire::read_le(is_, v)) fail(what);
        offset_ += sizeof(T);
        return v;
    }

    std::string read_bytes(std::size_t n, const char* what) {
        std::string s(n, '\0');
        is_.read(s.data(), static_cast<std::streamsize>(n));
        if (!is_) fail(what);
        offset_ += n;
        return s;
    }

    [[noreturn]] void fail(const std::string& what) const {
        throw IoError("checkpoint " + path_ + ": truncated or corrupt while reading " + what + " at byte offset " +
                      std::to_string(offset_));
    }

    std::size_t offset() const { return offset_; }

private:
    std::istream& is_;
    std::string path_;
    std::size_t offset_ = 0;
};

}  // namespace

const Tensor* Checkpoint::find(const std::string& name) const {
    for (const auto& [n, t] : tensors) {
        if (n == name) return &t;
    }
    return nullptr;
}

Tensor Checkpoint::at(const std::string& name) const {
    const Tensor* t = find(name);
    if (!t) throw IoError("checkpoint: missing tensor '" + name + "'");
    return *t;
}

void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path) {
    std::error_code ec;
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path(), ec);
    const auto tmp = path.string() + ".tmp";
    {
        std::ofstream os(tmp, std::ios::binary | std::ios::trunc);
        if (!os) throw IoError("cannot open " + tmp + " for writing");
        os.write(kMagic, 4);
        wire::write_le<std::uint32_t>(os, Checkpoint::kVersion);

        json meta;
        meta["config_hash"] = ckpt.meta.config_hash;
        meta["seed"] = ckpt.meta.seed;
        meta["epoch"] = ckpt.meta.epoch;
        meta["extra"] = ckpt.meta.extra;
        const std::string meta_str = meta.dump();
        wire::write_le<std::uint32_t>(os, static_cast<std::uint32_t>(meta_str.size()));
        os.write(meta_str.data(), static_cast<std::streamsize>(meta_str.size()));

        wire::write_le<std::uint32_t>(os, static_cast<std::uint32_t>(ckpt.tensors.size()));
        for (const auto& [name, t] : ckpt.tensors) {
            wire::write_le<std::uint32_t>(os, static_cast<std::uint32_t>(name.size()));
            os.write(name.data(), static_cast<std::streamsize>(name.size()));
            wire::write_le<std::uint8_t>(os, 0);  // payload dtype tag: f32
            wire::write_le<std::uint8_t>(os, static_cast<std::uint8_t>(t.rank()));
            for (int i = 0; i < t.rank(); ++i) wire::write_le<std::uint64_t>(os, static_cast<std::uint64_t>(t.dim(i)));
            for (std::int64_t i = 0; i < t.numel(); ++i) {
                wire::write_le<float>(os, static_cast<float>(t.value_at(i)));
            }
        }
        if (!os) throw IoError("short write to " + tmp);
    }
    std::filesystem::rename(tmp, path, ec);
    if (ec) throw IoError("cannot move checkpoint into place at " + path.string() + ": " + ec.message());
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw IoError("cannot open checkpoint " + path.string());
    Reader r(is, path.string());

    const std::string magic = r.read_bytes(4, "magic");
    if (std::memcmp(magic.data(), kMagic, 4) != 0) {
        throw IoError("checkpoint " + path.string() + ": bad magic, not an MPCK file");
    }
    const auto version = r.read<std::uint32_t>("version");
    if (version != Checkpoint::kVersion) {
        throw IoError("checkpoint " + path.string() + ": format version " + std::to_string(version) +
                      " does not match supported version " + std::to_string(Checkpoint::kVersion));
    }

    Checkpoint ckpt;
    const auto meta_len = r.read<std::uint32_t>("metadata length");
    if (meta_len > (1u << 24)) r.fail("metadata length (implausibly large)");
    const std::string meta_str = r.read_bytes(meta_len, "metadata");
    try {
        const json meta = json::parse(meta_str);
        ckpt.meta.config_hash = meta.value("config_hash", "");
        ckpt.meta.seed = meta.value("seed", std::uint64_t{0});
        ckpt.meta.epoch = meta.value("epoch", 0);
        if (meta.contains("extra")) {
            ckpt.meta.extra = meta.at("extra").get<std::map<std::string, std::string>>();
        }
    } catch (const json::exception& e) {
        throw IoError("checkpoint " + path.string() + ": bad metadata json: " + e.what());
    }

    const auto count = r.read<std::uint32_t>("tensor count");
    for (std::uint32_t ti = 0; ti < count; ++ti) {
        const auto name_len = r.read<std::uint32_t>("tensor name length");
        if (name_len == 0 || name_len > kMaxNameLen) r.fail("tensor name length (out of bounds)");
        const std::string name = r.read_bytes(name_len, "tensor name");
        const auto dtype_tag = r.read<std::uint8_t>("dtype tag");
        if (dtype_tag != 0) r.fail("dtype tag (unsupported)");
        const auto rank = r.read<std::uint8_t>("rank");
        if (rank == 0 || rank > kMaxRank) r.fail("rank (out of bounds)");
        Shape shape;
        std::int64_t numel = 1;
        for (std::uint8_t i = 0; i < rank; ++i) {
            const auto e = r.read<std::uint64_t>("extent");
            if (e == 0 || e > (1ull << 32)) r.fail("extent (out of bounds)");
            shape.push_back(static_cast<std::int64_t>(e));
            numel *= static_cast<std::int64_t>(e);
        }
        if (numel > (1ll << 31)) r.fail("tensor size (implausibly large)");
        std::vector<float> data(static_cast<std::size_t>(numel));
        for (auto& v : data) v = r.read<float>("tensor payload");
        Tensor t = Tensor::from_floats(std::move(shape), std::move(data));
        t.set_name(name);
        ckpt.tensors.emplace_back(name, std::move(t));
    }
    // trailing garbage means the writer and reader disagree; flag it
    char probe;
    if (is.read(&probe, 1)) {
        throw IoError("checkpoint " + path.string() + ": unexpected trailing data at byte offset " +
                      std::to_string(r.offset()));
    }
    return ckpt;
}

void restore_tensors(const Checkpoint& ckpt, const NamedTensors& dst) {
    for (const auto& [name, t] : dst) {
        const Tensor* src = ckpt.find(name);
        if (!src) throw IoError("checkpoint: missing tensor '" + name + "'");
        if (src->shape() != t.shape()) {
            throw IoError("checkpoint: tensor '" + name + "' has shape " + shape_str(src->shape()) +
                          ", expected " + shape_str(t.shape()));
        }
        Tensor dst_t = t;
        if (t.dtype() == Dtype::F32) {
            auto out = dst_t.data_mut<float>();
            auto in = src->data<float>();
            std::copy(in.begin(), in.end(), out.begin());
        } else {
            auto out = dst_t.data_mut<double>();
            for (std::int64_t i = 0; i < src->numel(); ++i) out[static_cast<std::size_t>(i)] = src->value_at(i);
        }
    }
}

}  // namespace vlp
