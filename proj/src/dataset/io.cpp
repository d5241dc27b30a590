#include "cf3d/io.hpp"

#include <cstring>
#include <json.hpp>

#include "cf3d/bytes.hpp"
#include "cf3d/errors.hpp"

namespace cf3d {

namespace {

using nlohmann::json;

constexpr std::uint32_t kVersion = 1;

void put_header(ByteWriter& w, const char magic[4], const json& header) {
    w.put_bytes(magic, 4);
    const std::string text = header.dump();
    w.put(static_cast<std::uint32_t>(text.size()));
    w.put_bytes(text.data(), text.size());
}

json get_header(ByteReader& r, const char magic[4], const char* what) {
    char m[4];
    r.get_bytes(m, 4);
    if (std::memcmp(m, magic, 4) != 0) throw FormatError(std::string(what) + ": bad magic");
    const auto len = r.get<std::uint32_t>();
    if (len > r.remaining()) throw FormatError(std::string(what) + ": header length exceeds file size");
    std::string text(len, '\0');
    r.get_bytes(text.data(), len);
    json h;
    try {
        h = json::parse(text);
    } catch (const json::exception& e) {
        throw FormatError(std::string(what) + ": unreadable header (" + e.what() + ")");
    }
    if (!h.is_object() || h.value("version", 0u) != kVersion)
        throw FormatError(std::string(what) + ": unsupported version");
    return h;
}

template <class T>
T field(const json& h, const char* key, const char* what) {
    try {
        return h.at(key).get<T>();
    } catch (const json::exception&) {
        throw FormatError(std::string(what) + ": missing or malformed header field '" + key + "'");
    }
}

}  // namespace

// ---- scenario --------------------------------------------------------------

std::vector<std::uint8_t> encode_scenario(const Scenario& scn) {
    validate(scn);
    json h = {{"format", "cf3d-scenario"},
              {"version", kVersion},
              {"grid_w", scn.grid_w},
              {"grid_h", scn.grid_h},
              {"seed", scn.seed},
              {"target_density", scn.target_density},
              {"bs",
               {{"x", scn.bs.x},
                {"y", scn.bs.y},
                {"mast_height", scn.bs.mast_height},
                {"n_bs", scn.bs.n_bs},
                {"spacing_over_lambda", scn.bs.spacing_over_lambda},
                {"carrier_hz", scn.bs.carrier_hz},
                {"tx_power_dbm", scn.bs.tx_power_dbm}}}};
    ByteWriter w;
    put_header(w, "CF3S", h);
    w.put_bytes(scn.e_h.data(), scn.e_h.size());
    w.put_bytes(scn.e_v.data(), scn.e_v.size() * sizeof(float));
    return std::move(w.bytes());
}

Scenario decode_scenario(const std::vector<std::uint8_t>& bytes) {
    ByteReader r(bytes, "scenario");
    const json h = get_header(r, "CF3S", "scenario");
    Scenario s;
    s.grid_w = field<std::size_t>(h, "grid_w", "scenario");
    s.grid_h = field<std::size_t>(h, "grid_h", "scenario");
    s.seed = field<std::uint64_t>(h, "seed", "scenario");
    s.target_density = field<double>(h, "target_density", "scenario");
    const json bs = field<json>(h, "bs", "scenario");
    s.bs.x = field<double>(bs, "x", "scenario");
    s.bs.y = field<double>(bs, "y", "scenario");
    s.bs.mast_height = field<double>(bs, "mast_height", "scenario");
    s.bs.n_bs = field<std::size_t>(bs, "n_bs", "scenario");
    s.bs.spacing_over_lambda = field<double>(bs, "spacing_over_lambda", "scenario");
    s.bs.carrier_hz = field<double>(bs, "carrier_hz", "scenario");
    s.bs.tx_power_dbm = field<double>(bs, "tx_power_dbm", "scenario");
    const std::size_t n = s.grid_w * s.grid_h;
    if (s.grid_w == 0 || s.grid_h == 0 || n > (1u << 26)) throw FormatError("scenario: implausible grid size");
    if (r.remaining() != n * (1 + sizeof(float))) throw FormatError("scenario: blob size does not match the grid");
    s.e_h.resize(n);
    s.e_v.resize(n);
    r.get_bytes(s.e_h.data(), n);
    r.get_bytes(s.e_v.data(), n * sizeof(float));
    validate(s);
    return s;
}

void save_scenario(const std::filesystem::path& path, const Scenario& scn) { write_file(path, encode_scenario(scn)); }
Scenario load_scenario(const std::filesystem::path& path) { return decode_scenario(read_file(path)); }

// ---- CSI store -------------------------------------------------------------

std::vector<std::uint8_t> encode_store(const CfStore& store) {
    json h = {{"format", "cf3d-store"},
              {"version", kVersion},
              {"scenario_id", store.scenario_id},
              {"g_thr", store.norm.g_thr},
              {"g_max", store.norm.g_max},
              {"count", store.tuples.size()}};
    ByteWriter w;
    put_header(w, "CF3C", h);
    for (const auto& t : store.tuples) {
        w.put(t.position.x);
        w.put(t.position.y);
        w.put(t.position.z);
        w.put(t.rss_db);
        w.put(t.rss_norm);
    }
    return std::move(w.bytes());
}

CfStore decode_store(const std::vector<std::uint8_t>& bytes) {
    ByteReader r(bytes, "store");
    const json h = get_header(r, "CF3C", "store");
    CfStore s;
    s.scenario_id = field<std::string>(h, "scenario_id", "store");
    s.norm.g_thr = field<double>(h, "g_thr", "store");
    s.norm.g_max = field<double>(h, "g_max", "store");
    const auto count = field<std::size_t>(h, "count", "store");
    if (r.remaining() != count * 5 * sizeof(double)) throw FormatError("store: record blob does not match count");
    s.tuples.resize(count);
    for (auto& t : s.tuples) {
        t.position.x = r.get<double>();
        t.position.y = r.get<double>();
        t.position.z = r.get<double>();
        t.rss_db = r.get<double>();
        t.rss_norm = r.get<double>();
        if (!(t.rss_norm >= 0.0 && t.rss_norm <= 1.0)) throw FormatError("store: normalised RSS outside [0, 1]");
    }
    return s;
}

void save_store(const std::filesystem::path& path, const CfStore& store) { write_file(path, encode_store(store)); }
CfStore load_store(const std::filesystem::path& path) { return decode_store(read_file(path)); }

// ---- ground grid -----------------------------------------------------------

std::vector<std::uint8_t> encode_grid(const GroundMeasurementGrid& g) {
    if (g.values.size() != g.grid_w * g.grid_h || g.mask.size() != g.values.size())
        throw UsageError("grid buffers do not match its dimensions");
    json h = {{"format", "cf3d-ground-grid"},
              {"version", kVersion},
              {"grid_w", g.grid_w},
              {"grid_h", g.grid_h},
              {"height_m", kGroundHeight},
              {"g_thr", g.norm.g_thr},
              {"g_max", g.norm.g_max}};
    ByteWriter w;
    put_header(w, "CF3G", h);
    w.put_bytes(g.values.data(), g.values.size() * sizeof(float));
    w.put_bytes(g.mask.data(), g.mask.size());
    return std::move(w.bytes());
}

GroundMeasurementGrid decode_grid(const std::vector<std::uint8_t>& bytes) {
    ByteReader r(bytes, "grid");
    const json h = get_header(r, "CF3G", "grid");
    GroundMeasurementGrid g;
    g.grid_w = field<std::size_t>(h, "grid_w", "grid");
    g.grid_h = field<std::size_t>(h, "grid_h", "grid");
    g.norm.g_thr = field<double>(h, "g_thr", "grid");
    g.norm.g_max = field<double>(h, "g_max", "grid");
    const std::size_t n = g.grid_w * g.grid_h;
    if (n == 0 || n > (1u << 26)) throw FormatError("grid: implausible size");
    if (r.remaining() != n * (sizeof(float) + 1)) throw FormatError("grid: blob size does not match dimensions");
    g.values.resize(n);
    g.mask.resize(n);
    r.get_bytes(g.values.data(), n * sizeof(float));
    r.get_bytes(g.mask.data(), n);
    for (std::size_t i = 0; i < n; ++i)
        if (!(g.values[i] >= 0.0f && g.values[i] <= 1.0f) || g.mask[i] > 1)
            throw FormatError("grid: value or mask out of range at cell " + std::to_string(i));
    return g;
}

void save_grid(const std::filesystem::path& path, const GroundMeasurementGrid& g) { write_file(path, encode_grid(g)); }
GroundMeasurementGrid load_grid(const std::filesystem::path& path) { return decode_grid(read_file(path)); }

}  // namespace cf3d
