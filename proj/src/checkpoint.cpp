#include "npnet/checkpoint.hpp"

#include <cstdint>
#include <cstring>
#include <fstream>
#include <sstream>
#include <vector>

#include "npnet/errors.hpp"

namespace npnet {

namespace {

constexpr char kMagic[4] = {'N', 'P', 'N', 'T'};
constexpr std::uint32_t kVersion = 1;

void put_u16(std::ostream& out, std::uint16_t v) {
    unsigned char b[2] = {static_cast<unsigned char>(v & 0xff),
                          static_cast<unsigned char>(v >> 8)};
    out.write(reinterpret_cast<const char*>(b), 2);
}

void put_u32(std::ostream& out, std::uint32_t v) {
    unsigned char b[4];
    for (int i = 0; i < 4; ++i) b[i] = static_cast<unsigned char>(v >> (8 * i));
    out.write(reinterpret_cast<const char*>(b), 4);
}

void put_f32(std::ostream& out, float v) {
    std::uint32_t bits;
    std::memcpy(&bits, &v, 4);
    put_u32(out, bits);
}

std::uint16_t get_u16(std::istream& in) {
    unsigned char b[2];
    in.read(reinterpret_cast<char*>(b), 2);
    if (!in) throw CheckpointError("truncated checkpoint");
    return static_cast<std::uint16_t>(b[0] | (b[1] << 8));
}

std::uint32_t get_u32(std::istream& in) {
    unsigned char b[4];
    in.read(reinterpret_cast<char*>(b), 4);
    if (!in) throw CheckpointError("truncated checkpoint");
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(b[i]) << (8 * i);
    return v;
}

float get_f32(std::istream& in) {
    std::uint32_t bits = get_u32(in);
    float v;
    std::memcpy(&v, &bits, 4);
    return v;
}

std::string config_block(const ModelConfig& c) {
    std::ostringstream out;
    out << "in_channels=" << c.in_channels << "\n";
    out << "num_classes=" << c.num_classes << "\n";
    out << "widths=" << c.widths[0] << "," << c.widths[1] << "," << c.widths[2]
        << "\n";
    out << "reduction=" << c.reduction << "\n";
    out << "dilation_rates=" << c.dilation_rates[0] << ","
        << c.dilation_rates[1] << "," << c.dilation_rates[2] << ","
        << c.dilation_rates[3] << "\n";
    out << "attention=" << to_string(c.attention) << "\n";
    return out.str();
}

std::vector<int> parse_int_list(const std::string& text) {
    std::vector<int> values;
    std::stringstream ss(text);
    std::string item;
    while (std::getline(ss, item, ',')) {
        values.push_back(std::stoi(item));
    }
    return values;
}

ModelConfig parse_config_block(const std::string& text) {
    ModelConfig cfg;
    std::stringstream ss(text);
    std::string line;
    while (std::getline(ss, line)) {
        if (line.empty()) continue;
        auto eq = line.find('=');
        if (eq == std::string::npos) {
            throw CheckpointError("malformed config line '" + line + "'");
        }
        std::string key = line.substr(0, eq);
        std::string value = line.substr(eq + 1);
        if (key == "in_channels") {
            cfg.in_channels = std::stoi(value);
        } else if (key == "num_classes") {
            cfg.num_classes = std::stoi(value);
        } else if (key == "widths") {
            auto v = parse_int_list(value);
            if (v.size() != 3) throw CheckpointError("widths needs 3 values");
            cfg.widths = {v[0], v[1], v[2]};
        } else if (key == "reduction") {
            cfg.reduction = std::stoi(value);
        } else if (key == "dilation_rates") {
            auto v = parse_int_list(value);
            if (v.size() != 4) {
                throw CheckpointError("dilation_rates needs 4 values");
            }
            cfg.dilation_rates = {v[0], v[1], v[2], v[3]};
        } else if (key == "attention") {
            cfg.attention = attention_from_string(value);
        } else {
            throw CheckpointError("unknown config key '" + key + "'");
        }
    }
    return cfg;
}

void write_tensor(std::ostream& out, const std::string& name,
                  const Tensor& t) {
    put_u16(out, static_cast<std::uint16_t>(name.size()));
    out.write(name.data(), static_cast<std::streamsize>(name.size()));
    out.put(0);  // dtype f32
    put_u32(out, 4);
    const Shape& s = t.shape();
    put_u32(out, static_cast<std::uint32_t>(s.n));
    put_u32(out, static_cast<std::uint32_t>(s.c));
    put_u32(out, static_cast<std::uint32_t>(s.h));
    put_u32(out, static_cast<std::uint32_t>(s.w));
    for (std::size_t i = 0; i < t.size(); ++i) put_f32(out, t[i]);
}

}  // namespace

void save_checkpoint(const Model& model, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw DataError("cannot open checkpoint for writing: " + path);

    out.write(kMagic, 4);
    put_u32(out, kVersion);
    std::string cfg = config_block(model.config());
    put_u32(out, static_cast<std::uint32_t>(cfg.size()));
    out.write(cfg.data(), static_cast<std::streamsize>(cfg.size()));

    put_u32(out, static_cast<std::uint32_t>(model.params().size() +
                                            model.buffers().size()));
    for (const Parameter& p : model.params()) {
        write_tensor(out, p.name, p.value);
    }
    for (const NamedTensor& b : model.buffers()) {
        write_tensor(out, b.name, b.value);
    }
    if (!out) throw DataError("checkpoint write failed: " + path);
}

Model load_checkpoint(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot open checkpoint: " + path);

    char magic[4];
    in.read(magic, 4);
    if (!in || std::memcmp(magic, kMagic, 4) != 0) {
        throw CheckpointError("bad checkpoint magic in " + path);
    }
    std::uint32_t version = get_u32(in);
    if (version != kVersion) {
        throw CheckpointError("unsupported checkpoint version " +
                              std::to_string(version));
    }
    std::uint32_t cfg_len = get_u32(in);
    std::string cfg_text(cfg_len, '\0');
    in.read(cfg_text.data(), cfg_len);
    if (!in) throw CheckpointError("truncated checkpoint");

    ModelConfig cfg = parse_config_block(cfg_text);
    Model model = build_npnet(cfg, 0);

    std::uint32_t tensor_count = get_u32(in);
    const std::uint32_t expected = static_cast<std::uint32_t>(
        model.params().size() + model.buffers().size());
    if (tensor_count != expected) {
        std::ostringstream msg;
        msg << "checkpoint holds " << tensor_count << " tensors, model needs "
            << expected;
        throw CheckpointError(msg.str());
    }

    for (std::uint32_t t = 0; t < tensor_count; ++t) {
        std::uint16_t name_len = get_u16(in);
        std::string name(name_len, '\0');
        in.read(name.data(), name_len);
        if (!in) throw CheckpointError("truncated checkpoint");
        int dtype = in.get();
        if (dtype == std::char_traits<char>::eof()) {
            throw CheckpointError("truncated checkpoint");
        }
        if (dtype != 0) {
            throw CheckpointError("unsupported dtype " + std::to_string(dtype) +
                                  " for tensor " + name);
        }
        std::uint32_t ndim = get_u32(in);
        if (ndim != 4) {
            throw CheckpointError("unsupported tensor rank " +
                                  std::to_string(ndim) + " for " + name);
        }
        Shape shape;
        shape.n = static_cast<int>(get_u32(in));
        shape.c = static_cast<int>(get_u32(in));
        shape.h = static_cast<int>(get_u32(in));
        shape.w = static_cast<int>(get_u32(in));

        Tensor* dst = nullptr;
        if (Parameter* p = model.find_param(name)) {
            dst = &p->value;
        } else if (NamedTensor* b = model.find_buffer(name)) {
            dst = &b->value;
        } else {
            throw CheckpointError("unknown tensor '" + name + "'");
        }
        if (!(dst->shape() == shape)) {
            throw CheckpointError("tensor '" + name + "' has shape " +
                                  shape.str() + ", model expects " +
                                  dst->shape().str());
        }
        for (std::size_t i = 0; i < dst->size(); ++i) (*dst)[i] = get_f32(in);
    }

    if (in.peek() != std::char_traits<char>::eof()) {
        throw CheckpointError("trailing data after last tensor");
    }
    return model;
}

}  // namespace npnet
