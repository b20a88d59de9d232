#include "pebm/checkpoint.hpp"

#include <bit>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <sstream>
#include <vector>

namespace pebm {

namespace {

constexpr char kMagic[5] = {'E', 'B', 'P', 'N', '1'};

void put_u32(std::ostream& os, std::uint32_t v) {
    unsigned char b[4];
    for (int i = 0; i < 4; ++i) b[i] = static_cast<unsigned char>(v >> (8 * i));
    os.write(reinterpret_cast<const char*>(b), 4);
}

void put_u64(std::ostream& os, std::uint64_t v) {
    unsigned char b[8];
    for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>(v >> (8 * i));
    os.write(reinterpret_cast<const char*>(b), 8);
}

void put_f64(std::ostream& os, double d) {
    std::uint64_t v = std::bit_cast<std::uint64_t>(d);
    put_u64(os, v);
}

std::uint32_t get_u32(std::istream& is) {
    unsigned char b[4];
    is.read(reinterpret_cast<char*>(b), 4);
    if (!is) throw ParseError("checkpoint: truncated file");
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(b[i]) << (8 * i);
    return v;
}

std::uint64_t get_u64(std::istream& is) {
    unsigned char b[8];
    is.read(reinterpret_cast<char*>(b), 8);
    if (!is) throw ParseError("checkpoint: truncated file");
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(b[i]) << (8 * i);
    return v;
}

double get_f64(std::istream& is) { return std::bit_cast<double>(get_u64(is)); }

std::string fmt_double(double d) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", d);
    return buf;
}

std::string join_sizes(const std::vector<std::size_t>& v) {
    std::ostringstream os;
    for (std::size_t i = 0; i < v.size(); ++i) {
        if (i) os << ",";
        os << v[i];
    }
    return os.str();
}

std::vector<std::size_t> parse_sizes(const std::string& s) {
    std::vector<std::size_t> out;
    std::istringstream is(s);
    std::string tok;
    while (std::getline(is, tok, ',')) out.push_back(std::stoull(tok));
    return out;
}

std::array<double, 3> parse_vec3(const std::string& s) {
    std::array<double, 3> out{};
    std::istringstream is(s);
    std::string tok;
    for (int i = 0; i < 3; ++i) {
        if (!std::getline(is, tok, ',')) {
            throw ParseError("checkpoint: malformed 3-vector value '" + s + "'");
        }
        out[i] = std::stod(tok);
    }
    return out;
}

std::string join_vec3(const std::array<double, 3>& v) {
    return fmt_double(v[0]) + "," + fmt_double(v[1]) + "," + fmt_double(v[2]);
}

void put_tensor(std::ostream& os, const std::string& name, const Tensor& t) {
    put_u32(os, static_cast<std::uint32_t>(name.size()));
    os.write(name.data(), static_cast<std::streamsize>(name.size()));
    put_u32(os, static_cast<std::uint32_t>(t.rank()));
    for (std::size_t d : t.shape()) put_u64(os, d);
    for (double v : t.data()) put_f64(os, v);
}

} // namespace

void save_checkpoint(const std::filesystem::path& path, const EnergyNet& net,
                     const CheckpointMeta& meta) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw ParseError("checkpoint: cannot open " + path.string() + " for writing");
    os.write(kMagic, sizeof kMagic);

    std::vector<std::string> lines;
    const NetConfig& cfg = net.config();
    lines.push_back("encoder_widths=" + join_sizes(cfg.encoder_widths));
    lines.push_back("head_widths=" + join_sizes(cfg.head_widths));
    lines.push_back(std::string("use_batch_norm_encoder=") +
                    (cfg.use_batch_norm_encoder ? "1" : "0"));
    lines.push_back("m_points=" + std::to_string(meta.m_points));
    lines.push_back("norm_mode=" + meta.norm_mode);
    lines.push_back("norm_mean=" + join_vec3(meta.norm.mean));
    lines.push_back("norm_scale=" + join_vec3(meta.norm.scale));

    put_u32(os, static_cast<std::uint32_t>(lines.size()));
    for (const auto& line : lines) {
        put_u32(os, static_cast<std::uint32_t>(line.size()));
        os.write(line.data(), static_cast<std::streamsize>(line.size()));
    }

    const std::size_t n_bn = net.num_bn_layers();
    put_u32(os, static_cast<std::uint32_t>(net.num_params() + 2 * n_bn));
    for (std::size_t i = 0; i < net.num_params(); ++i) {
        put_tensor(os, net.param_name(i), net.param(i));
    }
    for (std::size_t i = 0; i < n_bn; ++i) {
        const RunningStats& stats = net.bn_stats(i);
        if (!stats.populated) {
            throw StateError("checkpoint: cannot save unpopulated running stats");
        }
        const std::string base = "enc" + std::to_string(i) + ".bn";
        put_tensor(os, base + ".running_mean", stats.mean);
        put_tensor(os, base + ".running_var", stats.var);
    }
    if (!os) throw ParseError("checkpoint: write failed for " + path.string());
}

LoadedCheckpoint load_checkpoint(const std::filesystem::path& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw ParseError("checkpoint: cannot open " + path.string());
    char magic[5];
    is.read(magic, sizeof magic);
    if (!is || std::memcmp(magic, kMagic, sizeof kMagic) != 0) {
        throw ParseError("checkpoint: bad magic in " + path.string());
    }

    std::map<std::string, std::string> kv;
    const std::uint32_t n_lines = get_u32(is);
    for (std::uint32_t i = 0; i < n_lines; ++i) {
        const std::uint32_t len = get_u32(is);
        std::string line(len, '\0');
        is.read(line.data(), len);
        if (!is) throw ParseError("checkpoint: truncated config line");
        const std::size_t eq = line.find('=');
        if (eq == std::string::npos) {
            throw ParseError("checkpoint: config line without '=': " + line);
        }
        kv[line.substr(0, eq)] = line.substr(eq + 1);
    }

    auto need = [&](const std::string& key) -> const std::string& {
        auto it = kv.find(key);
        if (it == kv.end()) throw ParseError("checkpoint: missing config key " + key);
        return it->second;
    };

    NetConfig cfg;
    cfg.encoder_widths = parse_sizes(need("encoder_widths"));
    cfg.head_widths = parse_sizes(need("head_widths"));
    cfg.use_batch_norm_encoder = need("use_batch_norm_encoder") == "1";

    LoadedCheckpoint loaded;
    loaded.meta.m_points = std::stoull(need("m_points"));
    loaded.meta.norm_mode = need("norm_mode");
    loaded.meta.norm.mean = parse_vec3(need("norm_mean"));
    loaded.meta.norm.scale = parse_vec3(need("norm_scale"));

    EnergyNet net = EnergyNet::init(cfg, 0);

    std::map<std::string, std::size_t> by_name;
    for (std::size_t i = 0; i < net.num_params(); ++i) by_name[net.param_name(i)] = i;

    std::vector<RunningStats> stats(net.num_bn_layers());
    for (std::size_t i = 0; i < stats.size(); ++i) stats[i].populated = false;

    const std::uint32_t n_tensors = get_u32(is);
    for (std::uint32_t i = 0; i < n_tensors; ++i) {
        const std::uint32_t name_len = get_u32(is);
        std::string name(name_len, '\0');
        is.read(name.data(), name_len);
        const std::uint32_t rank = get_u32(is);
        std::vector<std::size_t> shape(rank);
        for (auto& d : shape) d = static_cast<std::size_t>(get_u64(is));
        std::vector<double> data(shape_product(shape));
        for (double& v : data) v = get_f64(is);
        Tensor t = Tensor::from_data(std::move(shape), std::move(data));

        if (auto it = by_name.find(name); it != by_name.end()) {
            if (!net.param(it->second).same_shape(t)) {
                throw ParseError("checkpoint: tensor " + name +
                                 " has shape " + t.shape_str() +
                                 ", config expects " +
                                 net.param(it->second).shape_str());
            }
            net.set_param(it->second, std::move(t));
        } else if (name.starts_with("enc") && (name.ends_with(".running_mean") ||
                                               name.ends_with(".running_var"))) {
            const std::size_t layer = std::stoull(name.substr(3));
            if (layer >= stats.size()) {
                throw ParseError("checkpoint: running stats for unknown layer " + name);
            }
            if (name.ends_with("mean")) {
                stats[layer].mean = std::move(t);
            } else {
                stats[layer].var = std::move(t);
            }
        } else {
            throw ParseError("checkpoint: unknown tensor " + name);
        }
    }

    for (std::size_t i = 0; i < stats.size(); ++i) {
        if (stats[i].mean.empty() || stats[i].var.empty()) {
            throw ParseError("checkpoint: missing running stats for encoder layer " +
                             std::to_string(i));
        }
        const std::size_t want = cfg.encoder_widths[i];
        if (stats[i].mean.size() != want || stats[i].var.size() != want) {
            throw ParseError("checkpoint: running stats shape mismatch at layer " +
                             std::to_string(i));
        }
        stats[i].populated = true;
        net.set_bn_stats(i, std::move(stats[i]));
    }

    loaded.net = std::move(net);
    return loaded;
}

} // namespace pebm
