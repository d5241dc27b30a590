#include "cf3d/checkpoint.hpp"

#include "cf3d/bytes.hpp"

namespace cf3d::ad {

std::vector<std::uint8_t> encode_checkpoint(const ParamList& params) {
    ByteWriter w;
    w.put_bytes("CF3D", 4);
    w.put(kCheckpointVersion);
    w.put(static_cast<std::uint32_t>(params.size()));
    for (const auto& p : params) {
        w.put_string(p.name);
        w.put(static_cast<std::uint32_t>(p.tensor.rank()));
        for (auto d : p.tensor.shape()) w.put(static_cast<std::uint64_t>(d));
        const auto v = p.tensor.data();
        w.put_bytes(v.data(), v.size() * sizeof(double));
    }
    return std::move(w.bytes());
}

void decode_checkpoint(const std::vector<std::uint8_t>& bytes, const ParamList& params) {
    ByteReader r(bytes, "checkpoint");
    char magic[4];
    r.get_bytes(magic, 4);
    if (std::string(magic, 4) != "CF3D") throw FormatError("checkpoint: bad magic");
    const auto version = r.get<std::uint32_t>();
    if (version != kCheckpointVersion) throw FormatError("checkpoint: unsupported version " + std::to_string(version));
    const auto count = r.get<std::uint32_t>();
    if (count != params.size())
        throw FormatError("checkpoint: holds " + std::to_string(count) + " tensors, model expects " +
                          std::to_string(params.size()));
    // Decode everything first so a mismatch leaves the model untouched.
    std::vector<std::vector<double>> values(count);
    for (std::uint32_t i = 0; i < count; ++i) {
        const auto name = r.get_string();
        if (name != params[i].name)
            throw FormatError("checkpoint: tensor " + std::to_string(i) + " is '" + name + "', expected '" +
                              params[i].name + "'");
        const auto rank = r.get<std::uint32_t>();
        Shape shape(rank);
        for (auto& d : shape) d = static_cast<std::size_t>(r.get<std::uint64_t>());
        if (shape != params[i].tensor.shape())
            throw FormatError("checkpoint: '" + name + "' has shape " + to_string(shape) + ", expected " +
                              to_string(params[i].tensor.shape()));
        values[i].resize(numel(shape));
        r.get_bytes(values[i].data(), values[i].size() * sizeof(double));
    }
    if (r.remaining() != 0) throw FormatError("checkpoint: trailing bytes");
    for (std::uint32_t i = 0; i < count; ++i) {
        Tensor t = params[i].tensor;
        auto dst = t.mutable_data();
        std::copy(values[i].begin(), values[i].end(), dst.begin());
    }
}

void save_checkpoint(const std::filesystem::path& path, const ParamList& params) {
    write_file(path, encode_checkpoint(params));
}

void load_checkpoint(const std::filesystem::path& path, const ParamList& params) {
    decode_checkpoint(read_file(path), params);
}

}  // namespace cf3d::ad
