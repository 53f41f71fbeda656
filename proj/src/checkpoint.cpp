#include <bit>
#include <cstring>
#include <fstream>
#include <sstream>

#include "fsad/checkpoint.hpp"
#include "fsad/config.hpp"

namespace fsad {

namespace {

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

std::string join_ints(const std::vector<int>& v) {
    std::string s;
    for (std::size_t i = 0; i < v.size(); ++i) s += (i ? "," : "") + std::to_string(v[i]);
    return s.empty() ? "-" : s;
}

std::vector<int> split_ints(const std::string& s) {
    if (s == "-") return {};
    return parse_int_list(s);
}

std::string fmt_double(double v) {
    std::ostringstream os;
    os.precision(17);
    os << v;
    return os.str();
}

std::vector<std::pair<std::string, std::string>> model_entries(const ModelConfig& m) {
    return {
        {"host", to_string(m.host)},
        {"resolution", std::to_string(m.resolution)},
        {"in_channels", std::to_string(m.in_channels)},
        {"encoder_channels", join_ints(m.encoder_channels)},
        {"stn_channels", std::to_string(m.stn_channels)},
        {"predictor_hidden", std::to_string(m.predictor_hidden)},
        {"decoder_blocks", std::to_string(m.decoder_blocks)},
        {"decoder_ffn", std::to_string(m.decoder_ffn)},
        {"mask_ratio", fmt_double(m.mask_ratio)},
        {"neighborhood", std::to_string(m.neighborhood)},
        {"f0_post_mask", m.f0_post_mask ? "1" : "0"},
        {"disc_channels", join_ints(m.disc_channels)},
        {"disc_strides", join_ints(m.disc_strides)},
        {"disc_slope", fmt_double(m.disc_slope)},
        {"norm_eps", fmt_double(m.norm_eps)},
        {"cosine_eps", fmt_double(m.cosine_eps)},
    };
}

void set_model_entry(ModelConfig& m, const std::string& k, const std::string& v) {
    if (k == "host") m.host = parse_host(v);
    else if (k == "resolution") m.resolution = std::stoi(v);
    else if (k == "in_channels") m.in_channels = std::stoi(v);
    else if (k == "encoder_channels") m.encoder_channels = split_ints(v);
    else if (k == "stn_channels") m.stn_channels = std::stoi(v);
    else if (k == "predictor_hidden") m.predictor_hidden = std::stoi(v);
    else if (k == "decoder_blocks") m.decoder_blocks = std::stoi(v);
    else if (k == "decoder_ffn") m.decoder_ffn = std::stoi(v);
    else if (k == "mask_ratio") m.mask_ratio = std::stod(v);
    else if (k == "neighborhood") m.neighborhood = std::stoi(v);
    else if (k == "f0_post_mask") m.f0_post_mask = v == "1";
    else if (k == "disc_channels") m.disc_channels = split_ints(v);
    else if (k == "disc_strides") m.disc_strides = split_ints(v);
    else if (k == "disc_slope") m.disc_slope = std::stod(v);
    else if (k == "norm_eps") m.norm_eps = std::stod(v);
    else if (k == "cosine_eps") m.cosine_eps = std::stod(v);
    else fail(ErrorKind::SchemaViolation, "unknown model key '" + k + "'");
}

}  // namespace

std::string serialize_checkpoint(const Checkpoint& ckpt) {
    std::string data;
    std::ostringstream head;
    head << "fsad-checkpoint 1\n";
    for (const auto& [k, v] : model_entries(ckpt.model)) head << "model." << k << ' ' << v << '\n';
    for (const auto& [k, v] : ckpt.meta) {
        if (k.find_first_of(" \n") != std::string::npos || v.find('\n') != std::string::npos) fail(ErrorKind::InvalidInput, "checkpoint meta entries must be single-line");
        head << "meta." << k << ' ' << v << '\n';
    }
    auto add_group = [&](const char* group, const ParameterSet<float>& ps) {
        for (std::size_t i = 0; i < ps.size(); ++i) {
            const auto& t = ps[i];
            const std::size_t bytes = t.size() * sizeof(float);
            head << "param " << group << ' ' << ps.name(i) << ' ' << join_ints(t.shape) << ' ' << data.size() << ' ' << bytes << '\n';
            data.append(reinterpret_cast<const char*>(t.data.data()), bytes);
        }
    };
    add_group("model", ckpt.main);
    add_group("disc", ckpt.disc);
    head << "sha256 " << sha256_hex(data) << "\nend\n";
    return head.str() + data;
}

Checkpoint deserialize_checkpoint(const std::string& bytes, const std::string& source) {
    auto bad = [&](const std::string& msg) -> void { fail(ErrorKind::SchemaViolation, source + ": " + msg); };
    std::size_t pos = 0;
    auto next_line = [&](std::string& line) {
        const auto nl = bytes.find('\n', pos);
        if (nl == std::string::npos) return false;
        line = bytes.substr(pos, nl - pos);
        pos = nl + 1;
        return true;
    };
    std::string line;
    if (!next_line(line) || line != "fsad-checkpoint 1") bad("not an fsad checkpoint");

    struct Entry {
        std::string group, name;
        Shape shape;
        std::size_t offset, count;
    };
    std::vector<Entry> entries;
    std::string digest;
    Checkpoint ck;
    bool ended = false;
    while (next_line(line)) {
        if (line == "end") {
            ended = true;
            break;
        }
        std::istringstream ls(line);
        std::string key;
        ls >> key;
        try {
            if (key == "param") {
                Entry e;
                std::string shape;
                if (!(ls >> e.group >> e.name >> shape >> e.offset >> e.count)) bad("malformed param line: " + line);
                e.shape = split_ints(shape);
                entries.push_back(std::move(e));
            } else if (key == "sha256") {
                ls >> digest;
            } else if (key.rfind("model.", 0) == 0) {
                std::string v;
                ls >> v;
                set_model_entry(ck.model, key.substr(6), v);
            } else if (key.rfind("meta.", 0) == 0) {
                std::string v;
                std::getline(ls >> std::ws, v);
                ck.meta[key.substr(5)] = v;
            } else {
                bad("unknown manifest line: " + line);
            }
        } catch (const std::logic_error&) {
            bad("malformed manifest line: " + line);
        }
    }
    if (!ended) bad("manifest is not terminated");
    const std::string data = bytes.substr(pos);
    if (digest.empty() || sha256_hex(data) != digest) bad("content hash mismatch");
    for (const auto& e : entries) {
        if (e.count != numel(e.shape) * sizeof(float) || e.offset + e.count > data.size()) bad("parameter '" + e.name + "' is out of range");
        Tensor<float> t(e.shape);
        std::memcpy(t.data.data(), data.data() + e.offset, e.count);
        if (!t.all_finite()) bad("parameter '" + e.name + "' is not finite");
        if (e.group == "model") ck.main.add(e.name, std::move(t));
        else if (e.group == "disc") ck.disc.add(e.name, std::move(t));
        else bad("unknown parameter group '" + e.group + "'");
    }
    return ck;
}

void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path) {
    if (!path.parent_path().empty()) std::filesystem::create_directories(path.parent_path());
    const std::string bytes = serialize_checkpoint(ckpt);
    const auto tmp = path.string() + ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
        if (!out) fail(ErrorKind::IoError, "cannot write " + tmp);
    }
    std::filesystem::rename(tmp, path);
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) fail(ErrorKind::NotFound, "checkpoint not found: " + path.string());
    std::stringstream ss;
    ss << in.rdbuf();
    return deserialize_checkpoint(ss.str(), path.string());
}

}  // namespace fsad
