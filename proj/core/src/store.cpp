#include "pidflow/store.hpp"

#include <array>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iterator>
#include <random>
#include <sstream>

#include <nlohmann/json.hpp>

#include "pidflow/error.hpp"

namespace pidflow {

namespace fs = std::filesystem;
using json = nlohmann::json;

namespace {

constexpr std::array<char, 4> kLayerMagic{'P', 'I', 'D', 'L'};
constexpr std::array<char, 4> kTargetMagic{'P', 'I', 'D', 'Y'};
constexpr std::uint32_t kVisionWeightsBit = 1u << 0;
constexpr std::uint32_t kLanguageWeightsBit = 1u << 1;

// Little-endian byte sink.
class ByteWriter {
public:
    void bytes(const char* p, std::size_t n) { buf_.insert(buf_.end(), p, p + n); }
    void u8(std::uint8_t v) { buf_.push_back(static_cast<char>(v)); }
    void u32(std::uint32_t v)
    {
        for (int i = 0; i < 4; ++i) {
            buf_.push_back(static_cast<char>((v >> (8 * i)) & 0xFFu));
        }
    }
    void u64(std::uint64_t v)
    {
        for (int i = 0; i < 8; ++i) {
            buf_.push_back(static_cast<char>((v >> (8 * i)) & 0xFFu));
        }
    }
    void f32(float v) { u32(std::bit_cast<std::uint32_t>(v)); }
    void f64(double v) { u64(std::bit_cast<std::uint64_t>(v)); }

    const std::vector<char>& data() const { return buf_; }

private:
    std::vector<char> buf_;
};

// Little-endian byte source; every read reports whether enough bytes remained.
class ByteReader {
public:
    explicit ByteReader(const std::vector<char>& buf) : buf_(buf) {}

    std::size_t remaining() const { return buf_.size() - pos_; }

    bool u8(std::uint8_t& v)
    {
        if (remaining() < 1) return false;
        v = static_cast<std::uint8_t>(buf_[pos_++]);
        return true;
    }
    bool u32(std::uint32_t& v)
    {
        if (remaining() < 4) return false;
        v = 0;
        for (int i = 0; i < 4; ++i) {
            v |= static_cast<std::uint32_t>(static_cast<unsigned char>(buf_[pos_ + i])) << (8 * i);
        }
        pos_ += 4;
        return true;
    }
    bool u64(std::uint64_t& v)
    {
        if (remaining() < 8) return false;
        v = 0;
        for (int i = 0; i < 8; ++i) {
            v |= static_cast<std::uint64_t>(static_cast<unsigned char>(buf_[pos_ + i])) << (8 * i);
        }
        pos_ += 8;
        return true;
    }
    bool f32(float& v)
    {
        std::uint32_t u = 0;
        if (!u32(u)) return false;
        v = std::bit_cast<float>(u);
        return true;
    }
    bool f64(double& v)
    {
        std::uint64_t u = 0;
        if (!u64(u)) return false;
        v = std::bit_cast<double>(u);
        return true;
    }
    bool magic(const std::array<char, 4>& expected, bool& matched)
    {
        if (remaining() < 4) return false;
        matched = std::equal(expected.begin(), expected.end(), buf_.begin() + static_cast<std::ptrdiff_t>(pos_));
        pos_ += 4;
        return true;
    }

private:
    const std::vector<char>& buf_;
    std::size_t pos_ = 0;
};

// Accumulates violations for one file.
struct Sink {
    std::vector<Violation>& out;
    int layer;
    std::string field;

    void add(ViolationKind kind, std::string message) const
    {
        out.push_back(Violation{kind, layer, field, std::move(message)});
    }
};

std::optional<std::vector<char>> slurp(const fs::path& p)
{
    std::ifstream in(p, std::ios::binary);
    if (!in) {
        return std::nullopt;
    }
    return std::vector<char>(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
}

void spit(const fs::path& p, const std::vector<char>& bytes)
{
    std::ofstream out(p, std::ios::binary | std::ios::trunc);
    if (!out) {
        throw IoError("cannot open for writing: " + p.string());
    }
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) {
        throw IoError("write failed: " + p.string());
    }
}

bool all_finite(const FloatMatrix& m)
{
    return m.allFinite();
}

bool plain_file_name(const std::string& name)
{
    return !name.empty() && name.find('/') == std::string::npos && name.find('\\') == std::string::npos &&
           name != "." && name != "..";
}

// Reads `count` floats into dst; records non-finite values. Returns false on short read.
bool read_floats(ByteReader& r, float* dst, std::size_t count, bool& saw_non_finite)
{
    for (std::size_t i = 0; i < count; ++i) {
        if (!r.f32(dst[i])) {
            return false;
        }
        if (!std::isfinite(dst[i])) {
            saw_non_finite = true;
        }
    }
    return true;
}

std::vector<Violation> check_manifest(const Manifest& m)
{
    std::vector<Violation> v;
    auto add = [&](ViolationKind k, const std::string& field, const std::string& msg) {
        v.push_back(Violation{k, -1, field, msg});
    };
    if (m.format_version != static_cast<int>(kStoreFormatVersion)) {
        add(ViolationKind::bad_version, "format_version", "unsupported format version " + std::to_string(m.format_version));
    }
    if (m.num_layers < 1) {
        add(ViolationKind::invariant, "num_layers", "num_layers must be >= 1");
    }
    if (m.num_samples < 2) {
        add(ViolationKind::invariant, "num_samples", "num_samples must be >= 2");
    }
    if (m.hidden_dim < 1) {
        add(ViolationKind::invariant, "hidden_dim", "hidden_dim must be >= 1");
    }
    if (static_cast<int>(m.layer_files.size()) != m.num_layers) {
        add(ViolationKind::layer_count_mismatch, "layer_files",
            "layer count mismatch: num_layers=" + std::to_string(m.num_layers) + " but " +
                std::to_string(m.layer_files.size()) + " layer files");
    }
    for (const auto& f : m.layer_files) {
        if (!plain_file_name(f)) {
            add(ViolationKind::invariant, "layer_files", "layer file name must be a plain file name: '" + f + "'");
        }
    }
    if (m.granularity == Granularity::token && m.pooling_rule != PoolingRule::none) {
        add(ViolationKind::invariant, "pooling_rule", "token granularity requires pooling_rule=none");
    }
    if (m.target_kind == TargetKind::discrete_label && m.num_classes < 2) {
        add(ViolationKind::invariant, "num_classes", "discrete labels need num_classes >= 2");
    }
    return v;
}

void check_targets(const TargetVector& t, const Manifest& m, std::vector<Violation>& v)
{
    Sink sink{v, -1, "targets"};
    if (t.kind != m.target_kind) {
        sink.add(ViolationKind::invariant, "target kind does not match manifest target_kind");
    }
    if (static_cast<int>(t.size()) != m.num_samples) {
        sink.add(ViolationKind::target_length, "target length " + std::to_string(t.size()) +
                                                   " does not match num_samples " + std::to_string(m.num_samples));
    }
    if (t.kind == TargetKind::scalar_logit) {
        for (double y : t.values) {
            if (!std::isfinite(y)) {
                sink.add(ViolationKind::non_finite, "NaN payload: non-finite target value");
                break;
            }
        }
    } else {
        for (std::uint32_t y : t.labels) {
            if (m.num_classes >= 2 && y >= static_cast<std::uint32_t>(m.num_classes)) {
                sink.add(ViolationKind::label_range, "label " + std::to_string(y) + " outside [0, num_classes)");
                break;
            }
        }
    }
}

// --- binary encoders ---------------------------------------------------------

std::vector<char> encode_layer(const LayerBlock& b, const Manifest& m)
{
    ByteWriter w;
    w.bytes(kLayerMagic.data(), 4);
    w.u32(kStoreFormatVersion);
    w.u32(static_cast<std::uint32_t>(m.num_samples));
    w.u32(static_cast<std::uint32_t>(m.hidden_dim));
    if (m.granularity == Granularity::pooled) {
        for (Eigen::Index i = 0; i < b.x_v.size(); ++i) w.f32(b.x_v.data()[i]);
        for (Eigen::Index i = 0; i < b.x_l.size(); ++i) w.f32(b.x_l.data()[i]);
        return w.data();
    }
    std::uint32_t flags = 0;
    if (b.has_vision_weights) flags |= kVisionWeightsBit;
    if (b.has_language_weights) flags |= kLanguageWeightsBit;
    w.u32(flags);
    for (const auto& s : b.tokens) {
        w.u32(static_cast<std::uint32_t>(s.vision.rows()));
        w.u32(static_cast<std::uint32_t>(s.language.rows()));
        for (Eigen::Index i = 0; i < s.vision.size(); ++i) w.f32(s.vision.data()[i]);
        for (Eigen::Index i = 0; i < s.language.size(); ++i) w.f32(s.language.data()[i]);
        if (b.has_vision_weights) {
            for (float x : s.vision_weights) w.f32(x);
        }
        if (b.has_language_weights) {
            for (float x : s.language_weights) w.f32(x);
        }
    }
    return w.data();
}

std::vector<char> encode_targets(const TargetVector& t)
{
    ByteWriter w;
    w.bytes(kTargetMagic.data(), 4);
    w.u32(kStoreFormatVersion);
    w.u32(static_cast<std::uint32_t>(t.size()));
    w.u8(t.kind == TargetKind::scalar_logit ? 0 : 1);
    if (t.kind == TargetKind::scalar_logit) {
        for (double y : t.values) w.f64(y);
    } else {
        for (std::uint32_t y : t.labels) w.u32(y);
    }
    return w.data();
}

// --- binary decoders (shared by read_store and validate_store) ---------------

std::optional<LayerBlock> decode_layer(const std::vector<char>& bytes, const Manifest& m, int layer, const Sink& sink)
{
    ByteReader r(bytes);
    bool magic_ok = false;
    std::uint32_t version = 0, n = 0, d = 0;
    if (!r.magic(kLayerMagic, magic_ok)) {
        sink.add(ViolationKind::short_read, "short read: file too small for header");
        return std::nullopt;
    }
    if (!magic_ok) {
        sink.add(ViolationKind::bad_magic, "bad magic: expected PIDL");
        return std::nullopt;
    }
    if (!r.u32(version) || !r.u32(n) || !r.u32(d)) {
        sink.add(ViolationKind::short_read, "short read: truncated header");
        return std::nullopt;
    }
    if (version != kStoreFormatVersion) {
        sink.add(ViolationKind::bad_version, "version mismatch: " + std::to_string(version));
        return std::nullopt;
    }
    if (static_cast<int>(n) != m.num_samples || static_cast<int>(d) != m.hidden_dim) {
        sink.add(ViolationKind::dimension_mismatch, "dimension mismatch: file has n=" + std::to_string(n) +
                                                        ", d=" + std::to_string(d) + "; manifest has n=" +
                                                        std::to_string(m.num_samples) +
                                                        ", d=" + std::to_string(m.hidden_dim));
        return std::nullopt;
    }

    LayerBlock block;
    block.layer_index = layer;
    bool non_finite = false;
    bool complete = true;

    if (m.granularity == Granularity::pooled) {
        block.x_v.resize(n, d);
        block.x_l.resize(n, d);
        const std::size_t count = static_cast<std::size_t>(n) * d;
        complete = read_floats(r, block.x_v.data(), count, non_finite) &&
                   read_floats(r, block.x_l.data(), count, non_finite);
    } else {
        std::uint32_t flags = 0;
        if (!r.u32(flags)) {
            sink.add(ViolationKind::short_read, "short read: missing token flags");
            return std::nullopt;
        }
        block.has_vision_weights = (flags & kVisionWeightsBit) != 0;
        block.has_language_weights = (flags & kLanguageWeightsBit) != 0;
        bool bad_count = false;
        block.tokens.reserve(n);
        for (std::uint32_t i = 0; i < n && complete; ++i) {
            std::uint32_t nv = 0, nl = 0;
            if (!r.u32(nv) || !r.u32(nl)) {
                complete = false;
                break;
            }
            if (nv < 1 || nl < 1) {
                bad_count = true;
            }
            // Guard against absurd counts from corrupted files before allocating.
            const std::size_t need = (static_cast<std::size_t>(nv) + nl) * d * 4;
            if (need > r.remaining()) {
                complete = false;
                break;
            }
            TokenSample s;
            s.vision.resize(nv, d);
            s.language.resize(nl, d);
            complete = read_floats(r, s.vision.data(), static_cast<std::size_t>(nv) * d, non_finite) &&
                       read_floats(r, s.language.data(), static_cast<std::size_t>(nl) * d, non_finite);
            if (complete && block.has_vision_weights) {
                s.vision_weights.resize(nv);
                complete = read_floats(r, s.vision_weights.data(), nv, non_finite);
            }
            if (complete && block.has_language_weights) {
                s.language_weights.resize(nl);
                complete = read_floats(r, s.language_weights.data(), nl, non_finite);
            }
            block.tokens.push_back(std::move(s));
        }
        if (bad_count) {
            sink.add(ViolationKind::token_count, "token counts must be >= 1 per sample");
        }
    }
    if (non_finite) {
        sink.add(ViolationKind::non_finite, "NaN payload: non-finite activation value");
    }
    if (!complete) {
        sink.add(ViolationKind::short_read, "short read: payload truncated");
        return std::nullopt;
    }
    if (r.remaining() != 0) {
        sink.add(ViolationKind::trailing_bytes, std::to_string(r.remaining()) + " trailing bytes after payload");
    }
    return block;
}

std::optional<TargetVector> decode_targets(const std::vector<char>& bytes, const Manifest& m, const Sink& sink)
{
    ByteReader r(bytes);
    bool magic_ok = false;
    std::uint32_t version = 0, n = 0;
    std::uint8_t kind = 0;
    if (!r.magic(kTargetMagic, magic_ok)) {
        sink.add(ViolationKind::short_read, "short read: file too small for header");
        return std::nullopt;
    }
    if (!magic_ok) {
        sink.add(ViolationKind::bad_magic, "bad magic: expected PIDY");
        return std::nullopt;
    }
    if (!r.u32(version) || !r.u32(n) || !r.u8(kind)) {
        sink.add(ViolationKind::short_read, "short read: truncated header");
        return std::nullopt;
    }
    if (version != kStoreFormatVersion) {
        sink.add(ViolationKind::bad_version, "version mismatch: " + std::to_string(version));
        return std::nullopt;
    }
    if (kind > 1) {
        sink.add(ViolationKind::invariant, "unknown target kind byte " + std::to_string(kind));
        return std::nullopt;
    }
    TargetVector t;
    t.kind = kind == 0 ? TargetKind::scalar_logit : TargetKind::discrete_label;
    bool complete = true;
    if (t.kind == TargetKind::scalar_logit) {
        t.values.resize(n);
        for (std::uint32_t i = 0; i < n && complete; ++i) complete = r.f64(t.values[i]);
    } else {
        t.labels.resize(n);
        for (std::uint32_t i = 0; i < n && complete; ++i) complete = r.u32(t.labels[i]);
    }
    if (!complete) {
        sink.add(ViolationKind::short_read, "short read: payload truncated");
        return std::nullopt;
    }
    if (r.remaining() != 0) {
        sink.add(ViolationKind::trailing_bytes, std::to_string(r.remaining()) + " trailing bytes after payload");
    }
    check_targets(t, m, sink.out);
    return t;
}

// Parses the whole directory, collecting every violation it can find.
std::optional<ActivationStore> parse_directory(const fs::path& dir, std::vector<Violation>& out)
{
    const auto manifest_path = dir / "manifest.json";
    const auto text = slurp(manifest_path);
    if (!text) {
        out.push_back(Violation{ViolationKind::missing_file, -1, "manifest.json",
                                "missing file: " + manifest_path.string()});
        return std::nullopt;
    }
    Manifest m;
    try {
        m = manifest_from_json(std::string_view(text->data(), text->size()));
    } catch (const std::exception& e) {
        out.push_back(Violation{ViolationKind::bad_manifest, -1, "manifest.json", e.what()});
        return std::nullopt;
    }
    auto mv = check_manifest(m);
    const bool manifest_ok = mv.empty();
    out.insert(out.end(), mv.begin(), mv.end());
    if (!manifest_ok) {
        return std::nullopt;
    }

    ActivationStore store;
    store.manifest = m;
    bool ok = true;
    for (int l = 0; l < m.num_layers; ++l) {
        const auto& name = m.layer_files[static_cast<std::size_t>(l)];
        Sink sink{out, l, name};
        const auto bytes = slurp(dir / name);
        if (!bytes) {
            sink.add(ViolationKind::missing_file, "missing file: " + (dir / name).string());
            ok = false;
            continue;
        }
        const std::size_t before = out.size();
        auto block = decode_layer(*bytes, m, l, sink);
        if (!block || out.size() != before) {
            ok = false;
        }
        if (block) {
            store.layers.push_back(std::move(*block));
        }
    }
    Sink tsink{out, -1, "targets.bin"};
    const auto tbytes = slurp(dir / "targets.bin");
    if (!tbytes) {
        tsink.add(ViolationKind::missing_file, "missing file: " + (dir / "targets.bin").string());
        return std::nullopt;
    }
    const std::size_t before = out.size();
    auto targets = decode_targets(*tbytes, m, tsink);
    if (!targets || out.size() != before || !ok) {
        return std::nullopt;
    }
    store.targets = std::move(*targets);
    return store;
}

}  // namespace

// --- enum conversions --------------------------------------------------------

std::string_view to_string(Condition c) { return c == Condition::normal ? "normal" : "knockout"; }
std::string_view to_string(Granularity g) { return g == Granularity::pooled ? "pooled" : "token"; }
std::string_view to_string(PoolingRule p)
{
    switch (p) {
    case PoolingRule::mean: return "mean";
    case PoolingRule::max: return "max";
    case PoolingRule::attention: return "attention";
    case PoolingRule::none: return "none";
    }
    return "none";
}
std::string_view to_string(TargetKind k) { return k == TargetKind::scalar_logit ? "scalar_logit" : "discrete_label"; }

Condition parse_condition(std::string_view s)
{
    if (s == "normal") return Condition::normal;
    if (s == "knockout") return Condition::knockout;
    throw ValidationError("unknown condition '" + std::string(s) + "'");
}
Granularity parse_granularity(std::string_view s)
{
    if (s == "pooled") return Granularity::pooled;
    if (s == "token") return Granularity::token;
    throw ValidationError("unknown granularity '" + std::string(s) + "'");
}
PoolingRule parse_pooling_rule(std::string_view s)
{
    if (s == "mean") return PoolingRule::mean;
    if (s == "max") return PoolingRule::max;
    if (s == "attention") return PoolingRule::attention;
    if (s == "none") return PoolingRule::none;
    throw ValidationError("unknown pooling rule '" + std::string(s) + "'");
}
TargetKind parse_target_kind(std::string_view s)
{
    if (s == "scalar_logit") return TargetKind::scalar_logit;
    if (s == "discrete_label") return TargetKind::discrete_label;
    throw ValidationError("unknown target kind '" + std::string(s) + "'");
}

std::string_view to_string(ViolationKind k)
{
    switch (k) {
    case ViolationKind::missing_file: return "missing_file";
    case ViolationKind::bad_manifest: return "bad_manifest";
    case ViolationKind::bad_magic: return "bad_magic";
    case ViolationKind::bad_version: return "bad_version";
    case ViolationKind::short_read: return "short_read";
    case ViolationKind::trailing_bytes: return "trailing_bytes";
    case ViolationKind::layer_count_mismatch: return "layer_count_mismatch";
    case ViolationKind::dimension_mismatch: return "dimension_mismatch";
    case ViolationKind::non_finite: return "non_finite";
    case ViolationKind::target_length: return "target_length";
    case ViolationKind::label_range: return "label_range";
    case ViolationKind::token_count: return "token_count";
    case ViolationKind::invariant: return "invariant";
    }
    return "invariant";
}

std::vector<double> TargetVector::as_doubles() const
{
    if (kind == TargetKind::scalar_logit) {
        return values;
    }
    return std::vector<double>(labels.begin(), labels.end());
}

std::string layer_file_name(int layer)
{
    return "layer_" + std::to_string(layer) + ".bin";
}

std::string sample_ids_hash(std::span<const std::string> ids)
{
    std::uint64_t h = 0xcbf29ce484222325ull;
    for (const auto& id : ids) {
        for (unsigned char c : id) {
            h ^= c;
            h *= 0x100000001b3ull;
        }
        h ^= 0x0a;
        h *= 0x100000001b3ull;
    }
    std::ostringstream os;
    os << std::hex;
    os.width(16);
    os.fill('0');
    os << h;
    return os.str();
}

// --- manifest JSON -----------------------------------------------------------

std::string manifest_to_json(const Manifest& m)
{
    json j;
    j["format_version"] = m.format_version;
    j["model_id"] = m.model_id;
    j["task_id"] = m.task_id;
    j["condition"] = std::string(to_string(m.condition));
    j["num_layers"] = m.num_layers;
    j["hidden_dim"] = m.hidden_dim;
    j["num_samples"] = m.num_samples;
    j["granularity"] = std::string(to_string(m.granularity));
    j["pooling_rule"] = std::string(to_string(m.pooling_rule));
    j["target_kind"] = std::string(to_string(m.target_kind));
    j["base_seed"] = m.base_seed;
    j["layer_files"] = m.layer_files;
    j["capture_point"] = m.capture_point;
    j["sample_hash"] = m.sample_hash;
    j["num_classes"] = m.num_classes;
    return j.dump(2) + "\n";
}

Manifest manifest_from_json(std::string_view text)
{
    json j;
    try {
        j = json::parse(text);
    } catch (const json::parse_error& e) {
        throw ValidationError(std::string("manifest is not valid JSON: ") + e.what());
    }
    auto req = [&](const char* key) -> const json& {
        if (!j.contains(key)) {
            throw ValidationError(std::string("manifest missing key '") + key + "'");
        }
        return j.at(key);
    };
    Manifest m;
    try {
        m.format_version = req("format_version").get<int>();
        m.model_id = req("model_id").get<std::string>();
        m.task_id = req("task_id").get<std::string>();
        m.condition = parse_condition(req("condition").get<std::string>());
        m.num_layers = req("num_layers").get<int>();
        m.hidden_dim = req("hidden_dim").get<int>();
        m.num_samples = req("num_samples").get<int>();
        m.granularity = parse_granularity(req("granularity").get<std::string>());
        m.pooling_rule = parse_pooling_rule(req("pooling_rule").get<std::string>());
        m.target_kind = parse_target_kind(req("target_kind").get<std::string>());
        m.base_seed = req("base_seed").get<std::uint64_t>();
        m.layer_files = req("layer_files").get<std::vector<std::string>>();
        m.capture_point = j.value("capture_point", std::string{});
        m.sample_hash = j.value("sample_hash", std::string{});
        m.num_classes = j.value("num_classes", 0);
    } catch (const json::exception& e) {
        throw ValidationError(std::string("manifest field has wrong type: ") + e.what());
    }
    return m;
}

// --- public operations -------------------------------------------------------

std::vector<Violation> check_store(const ActivationStore& store)
{
    const Manifest& m = store.manifest;
    std::vector<Violation> v = check_manifest(m);
    if (static_cast<int>(store.layers.size()) != m.num_layers) {
        v.push_back(Violation{ViolationKind::layer_count_mismatch, -1, "layers",
                              "layer count mismatch: manifest num_layers=" + std::to_string(m.num_layers) + " but " +
                                  std::to_string(store.layers.size()) + " blocks"});
    }
    const auto n = static_cast<Eigen::Index>(m.num_samples);
    const auto d = static_cast<Eigen::Index>(m.hidden_dim);
    for (std::size_t i = 0; i < store.layers.size(); ++i) {
        const LayerBlock& b = store.layers[i];
        const int l = static_cast<int>(i);
        Sink sink{v, l, layer_file_name(l)};
        if (b.layer_index != l) {
            sink.add(ViolationKind::invariant, "layer_index " + std::to_string(b.layer_index) + " at position " +
                                                   std::to_string(l));
        }
        if (m.granularity == Granularity::pooled) {
            if (b.x_v.rows() != n || b.x_v.cols() != d || b.x_l.rows() != n || b.x_l.cols() != d) {
                sink.add(ViolationKind::dimension_mismatch, "dimension mismatch: pooled blocks must be n x d");
            } else if (!all_finite(b.x_v) || !all_finite(b.x_l)) {
                sink.add(ViolationKind::non_finite, "NaN payload: non-finite activation value");
            }
            continue;
        }
        if (static_cast<Eigen::Index>(b.tokens.size()) != n) {
            sink.add(ViolationKind::dimension_mismatch, "dimension mismatch: token records != num_samples");
            continue;
        }
        bool bad_count = false, bad_dim = false, bad_value = false, bad_weights = false;
        for (const auto& s : b.tokens) {
            bad_count |= s.vision.rows() < 1 || s.language.rows() < 1;
            bad_dim |= s.vision.cols() != d || s.language.cols() != d;
            bad_value |= !all_finite(s.vision) || !all_finite(s.language);
            bad_weights |= b.has_vision_weights != !s.vision_weights.empty() ||
                           b.has_language_weights != !s.language_weights.empty();
            bad_weights |= b.has_vision_weights && static_cast<Eigen::Index>(s.vision_weights.size()) != s.vision.rows();
            bad_weights |=
                b.has_language_weights && static_cast<Eigen::Index>(s.language_weights.size()) != s.language.rows();
            for (float w : s.vision_weights) bad_value |= !std::isfinite(w);
            for (float w : s.language_weights) bad_value |= !std::isfinite(w);
        }
        if (bad_count) sink.add(ViolationKind::token_count, "token counts must be >= 1 per sample");
        if (bad_dim) sink.add(ViolationKind::dimension_mismatch, "dimension mismatch: token width != hidden_dim");
        if (bad_value) sink.add(ViolationKind::non_finite, "NaN payload: non-finite token value");
        if (bad_weights) sink.add(ViolationKind::invariant, "weight blocks inconsistent with flags");
    }
    check_targets(store.targets, m, v);
    return v;
}

void write_store(const ActivationStore& store, const fs::path& dir)
{
    const auto violations = check_store(store);
    if (!violations.empty()) {
        const auto& f = violations.front();
        throw ValidationError("refusing to write invalid store (" + std::to_string(violations.size()) +
                              " violations): " + f.field + ": " + f.message);
    }
    const fs::path target = fs::absolute(dir).lexically_normal();
    const fs::path parent = target.parent_path();
    std::error_code ec;
    fs::create_directories(parent, ec);
    if (ec) {
        throw IoError("cannot create " + parent.string() + ": " + ec.message());
    }
    std::random_device rd;
    const std::string suffix = std::to_string(rd());
    const fs::path tmp = parent / (target.filename().string() + ".tmp-" + suffix);
    fs::remove_all(tmp, ec);
    fs::create_directory(tmp, ec);
    if (ec) {
        throw IoError("cannot create " + tmp.string() + ": " + ec.message());
    }
    try {
        const std::string mj = manifest_to_json(store.manifest);
        spit(tmp / "manifest.json", std::vector<char>(mj.begin(), mj.end()));
        for (std::size_t l = 0; l < store.layers.size(); ++l) {
            spit(tmp / store.manifest.layer_files[l], encode_layer(store.layers[l], store.manifest));
        }
        spit(tmp / "targets.bin", encode_targets(store.targets));

        if (fs::exists(target)) {
            const fs::path old = parent / (target.filename().string() + ".old-" + suffix);
            fs::rename(target, old);
            fs::rename(tmp, target);
            fs::remove_all(old, ec);
        } else {
            fs::rename(tmp, target);
        }
    } catch (const fs::filesystem_error& e) {
        fs::remove_all(tmp, ec);
        throw IoError(std::string("store write failed: ") + e.what());
    } catch (...) {
        fs::remove_all(tmp, ec);
        throw;
    }
}

ActivationStore read_store(const fs::path& dir)
{
    std::vector<Violation> violations;
    auto store = parse_directory(dir, violations);
    if (!violations.empty()) {
        const auto& f = violations.front();
        const std::string msg = f.field + ": " + f.message;
        if (f.kind == ViolationKind::missing_file) {
            throw IoError(msg);
        }
        throw ValidationError(msg);
    }
    return std::move(*store);
}

Manifest read_manifest(const fs::path& dir)
{
    const auto text = slurp(dir / "manifest.json");
    if (!text) {
        throw IoError("missing file: " + (dir / "manifest.json").string());
    }
    return manifest_from_json(std::string_view(text->data(), text->size()));
}

ValidationReport validate_store(const fs::path& dir)
{
    ValidationReport report;
    try {
        parse_directory(dir, report.violations);
    } catch (const std::exception& e) {
        report.violations.push_back(Violation{ViolationKind::invariant, -1, "store", e.what()});
    }
    return report;
}

}  // namespace pidflow
