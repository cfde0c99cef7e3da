#include "scnn/modelio.hpp"

#include <cstring>
#include <fstream>
#include <map>
#include <sstream>

#include "scnn/layers.hpp"

namespace scnn {

namespace fs = std::filesystem;

namespace {

constexpr char kMagic[4] = {'S', 'C', 'N', 'N'};
constexpr std::uint16_t kVersion = 1;

void put_u16(std::string& out, std::uint16_t v) {
  out.push_back(static_cast<char>(v & 0xff));
  out.push_back(static_cast<char>(v >> 8));
}

void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

void put_f32(std::string& out, float v) {
  std::uint32_t bits;
  std::memcpy(&bits, &v, 4);
  put_u32(out, bits);
}

class Reader {
 public:
  Reader(const std::string& buf, std::size_t pos = 0) : buf_(buf), pos_(pos) {}

  const char* take(std::size_t n) {
    if (pos_ + n > buf_.size())
      throw Error(ErrorCode::truncated_file, "model file: unexpected end");
    const char* p = buf_.data() + pos_;
    pos_ += n;
    return p;
  }
  std::uint16_t u16() {
    const unsigned char* p = reinterpret_cast<const unsigned char*>(take(2));
    return static_cast<std::uint16_t>(p[0] | (p[1] << 8));
  }
  std::uint32_t u32() {
    const unsigned char* p = reinterpret_cast<const unsigned char*>(take(4));
    return static_cast<std::uint32_t>(p[0]) | (static_cast<std::uint32_t>(p[1]) << 8) |
           (static_cast<std::uint32_t>(p[2]) << 16) |
           (static_cast<std::uint32_t>(p[3]) << 24);
  }
  float f32() {
    std::uint32_t bits = u32();
    float v;
    std::memcpy(&v, &bits, 4);
    return v;
  }
  std::size_t pos() const { return pos_; }

 private:
  const std::string& buf_;
  std::size_t pos_;
};

std::shared_ptr<Layer<float>> layer_from_spec(
    const std::string& kind, const std::map<std::string, std::string>& p) {
  auto get = [&](const std::string& key) -> const std::string& {
    auto it = p.find(key);
    if (it == p.end())
      throw Error(ErrorCode::bad_data,
                  "model descriptor: " + kind + " missing '" + key + "'");
    return it->second;
  };
  auto num = [&](const std::string& key) {
    return static_cast<std::size_t>(std::stoull(get(key)));
  };
  auto real = [&](const std::string& key) { return std::stod(get(key)); };

  if (kind == "conv")
    return std::make_shared<ConvLayer<float>>(num("filters"),
                                              num("in_channels"),
                                              num("kernel_h"), num("kernel_w"),
                                              num("stride"), num("pad"));
  if (kind == "pool")
    return std::make_shared<PoolLayer<float>>(
        get("kind") == "max" ? PoolKind::max : PoolKind::avg, num("window"),
        num("stride"), num("pad"));
  if (kind == "relu") return std::make_shared<ReluLayer<float>>();
  if (kind == "lrn")
    return std::make_shared<LrnLayer<float>>(
        num("size"), static_cast<float>(real("alpha")),
        static_cast<float>(real("beta")), static_cast<float>(real("k")));
  if (kind == "dropout")
    return std::make_shared<DropoutLayer<float>>(
        static_cast<float>(real("p")));
  if (kind == "dense")
    return std::make_shared<DenseLayer<float>>(
        num("out_units"), num("in_units"),
        get("activation") == "relu" ? Activation::relu : Activation::identity);
  if (kind == "flatten") return std::make_shared<FlattenLayer<float>>();
  if (kind == "concat") return std::make_shared<ConcatLayer<float>>();
  throw Error(ErrorCode::bad_data,
              "model descriptor: unknown layer kind '" + kind + "'");
}

}  // namespace

std::uint32_t crc32(const unsigned char* data, std::size_t len,
                    std::uint32_t seed) {
  static const auto table = [] {
    std::array<std::uint32_t, 256> t{};
    for (std::uint32_t i = 0; i < 256; ++i) {
      std::uint32_t c = i;
      for (int j = 0; j < 8; ++j)
        c = (c & 1) ? 0xedb88320u ^ (c >> 1) : c >> 1;
      t[i] = c;
    }
    return t;
  }();
  std::uint32_t crc = seed ^ 0xffffffffu;
  for (std::size_t i = 0; i < len; ++i)
    crc = table[(crc ^ data[i]) & 0xff] ^ (crc >> 8);
  return crc ^ 0xffffffffu;
}

std::string describe_architecture(const NetworkGraph<float>& net) {
  std::ostringstream os;
  os << "scnn-arch 1\n";
  os << "input";
  for (std::size_t i = 0; i < net.input_shape().size(); ++i)
    os << (i ? "," : " ") << net.input_shape()[i];
  os << "\n";
  for (const Node<float>& n : net.nodes()) {
    os << "node " << n.name << " " << n.layer->kind() << " inputs=";
    for (std::size_t i = 0; i < n.inputs.size(); ++i) {
      if (i) os << ",";
      os << (n.inputs[i] == kGraphInput ? std::string("@")
                                        : net.node(n.inputs[i]).name);
    }
    for (auto& [k, v] : n.layer->hyperparams()) os << " " << k << "=" << v;
    os << "\n";
  }
  os << "main_head " << net.node(net.main_head()).name << "\n";
  for (auto& [id, w] : net.aux_heads())
    os << "aux_head " << net.node(id).name << " " << w << "\n";
  return os.str();
}

NetworkGraph<float> architecture_from_description(const std::string& text) {
  std::istringstream is(text);
  std::string line;
  if (!std::getline(is, line) || line != "scnn-arch 1")
    throw Error(ErrorCode::bad_data, "model descriptor: bad header");
  NetworkGraph<float> net;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    std::istringstream ls(line);
    std::string tag;
    ls >> tag;
    if (tag == "input") {
      std::string dims;
      ls >> dims;
      std::vector<std::size_t> shape;
      std::istringstream ds(dims);
      std::string tok;
      while (std::getline(ds, tok, ',')) shape.push_back(std::stoull(tok));
      net = NetworkGraph<float>(shape);
    } else if (tag == "node") {
      std::string name, kind;
      ls >> name >> kind;
      std::map<std::string, std::string> params;
      std::vector<int> inputs;
      std::string kv;
      while (ls >> kv) {
        std::size_t eq = kv.find('=');
        if (eq == std::string::npos)
          throw Error(ErrorCode::bad_data,
                      "model descriptor: bad token '" + kv + "'");
        std::string key = kv.substr(0, eq);
        std::string value = kv.substr(eq + 1);
        if (key == "inputs") {
          std::istringstream vs(value);
          std::string in;
          while (std::getline(vs, in, ',')) {
            if (in == "@") {
              inputs.push_back(kGraphInput);
            } else {
              int id = net.find(in);
              if (id < 0)
                throw Error(ErrorCode::bad_data,
                            "model descriptor: unknown input '" + in + "'");
              inputs.push_back(id);
            }
          }
        } else {
          params[key] = value;
        }
      }
      net.add(name, layer_from_spec(kind, params), inputs);
    } else if (tag == "main_head") {
      std::string name;
      ls >> name;
      int id = net.find(name);
      if (id < 0)
        throw Error(ErrorCode::bad_data,
                    "model descriptor: unknown head '" + name + "'");
      net.set_main_head(id);
    } else if (tag == "aux_head") {
      std::string name;
      double weight;
      ls >> name >> weight;
      int id = net.find(name);
      if (id < 0)
        throw Error(ErrorCode::bad_data,
                    "model descriptor: unknown aux head '" + name + "'");
      net.add_aux_head(id, weight);
    } else {
      throw Error(ErrorCode::bad_data,
                  "model descriptor: unknown directive '" + tag + "'");
    }
  }
  if (net.main_head() < 0)
    throw Error(ErrorCode::bad_data, "model descriptor: no main head");
  return net;
}

void save_model(const NetworkGraph<float>& net, const fs::path& path) {
  std::string buf;
  buf.append(kMagic, 4);
  put_u16(buf, kVersion);
  put_u16(buf, 0);  // flags
  std::string desc = describe_architecture(net);
  put_u32(buf, static_cast<std::uint32_t>(desc.size()));
  buf += desc;

  // graph-topological order, field order within a layer
  auto params = const_cast<NetworkGraph<float>&>(net).parameters();
  put_u32(buf, static_cast<std::uint32_t>(params.size()));
  for (auto& [name, tensor] : params) {
    put_u16(buf, static_cast<std::uint16_t>(name.size()));
    buf += name;
    buf.push_back(static_cast<char>(tensor->rank()));
    for (std::size_t d : tensor->shape())
      put_u32(buf, static_cast<std::uint32_t>(d));
    for (std::size_t i = 0; i < tensor->size(); ++i)
      put_f32(buf, (*tensor)[i]);
  }
  put_u32(buf, crc32(reinterpret_cast<const unsigned char*>(buf.data()),
                     buf.size()));

  fs::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream f(tmp, std::ios::binary | std::ios::trunc);
    if (!f)
      throw Error(ErrorCode::io_failure, "cannot write " + tmp.string());
    f.write(buf.data(), static_cast<std::streamsize>(buf.size()));
    if (!f)
      throw Error(ErrorCode::io_failure, "write failed: " + tmp.string());
  }
  fs::rename(tmp, path);
}

NetworkGraph<float> load_model(const fs::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw Error(ErrorCode::io_failure, "cannot read " + path.string());
  std::ostringstream ss;
  ss << f.rdbuf();
  std::string buf = ss.str();

  if (buf.size() < 4 || std::memcmp(buf.data(), kMagic, 4) != 0)
    throw Error(ErrorCode::bad_magic, "not a model file: " + path.string());
  if (buf.size() < 12)
    throw Error(ErrorCode::truncated_file, "model file too short");
  std::uint32_t stored_crc;
  {
    Reader tail(buf, buf.size() - 4);
    stored_crc = tail.u32();
  }
  std::uint32_t actual_crc =
      crc32(reinterpret_cast<const unsigned char*>(buf.data()),
            buf.size() - 4);
  if (stored_crc != actual_crc)
    throw Error(ErrorCode::checksum_mismatch,
                "model file checksum mismatch in " + path.string());

  Reader r(buf, 4);
  std::uint16_t version = r.u16();
  if (version != kVersion)
    throw Error(ErrorCode::version_unsupported,
                "unsupported model version " + std::to_string(version));
  r.u16();  // flags
  std::uint32_t desc_len = r.u32();
  std::string desc(r.take(desc_len), desc_len);
  NetworkGraph<float> net = architecture_from_description(desc);

  std::uint32_t param_count = r.u32();
  auto params = net.parameters();
  if (param_count != params.size())
    throw Error(ErrorCode::shape_mismatch,
                "model file declares " + std::to_string(param_count) +
                    " parameters, architecture has " +
                    std::to_string(params.size()));
  for (auto& [name, tensor] : params) {
    std::uint16_t name_len = r.u16();
    std::string stored_name(r.take(name_len), name_len);
    if (stored_name != name)
      throw Error(ErrorCode::shape_mismatch,
                  "model file parameter order mismatch: expected '" + name +
                      "', found '" + stored_name + "'");
    std::size_t ndim = static_cast<unsigned char>(*r.take(1));
    std::vector<std::size_t> shape(ndim);
    for (std::size_t d = 0; d < ndim; ++d) shape[d] = r.u32();
    if (shape != tensor->shape())
      throw Error(ErrorCode::shape_mismatch,
                  "model file blob shape mismatch for '" + name + "'");
    for (std::size_t i = 0; i < tensor->size(); ++i) (*tensor)[i] = r.f32();
  }
  return net;
}

}  // namespace scnn
