#include "dilnet/netgraph.hpp"

#include <fstream>
#include <sstream>

#include "binio.hpp"

namespace dilnet {

void NetworkSpec::validate() const {
  if (layers.empty()) throw ArgumentError("network has no layers");
  int64_t chain = -1;
  for (size_t i = 0; i < layers.size(); ++i) {
    if (const auto* cl = std::get_if<ConvLayerSpec>(&layers[i])) {
      if (cl->kernel < 1 || cl->kernel % 2 == 0)
        throw ArgumentError("layer " + std::to_string(i) + ": kernel must be odd and >= 1");
      if (cl->dilation < 1 || cl->stride < 1)
        throw ArgumentError("layer " + std::to_string(i) + ": dilation and stride must be >= 1");
      if (cl->in_channels < 1 || cl->out_channels < 1)
        throw ArgumentError("layer " + std::to_string(i) + ": channel counts must be >= 1");
      if (chain >= 0 && cl->in_channels != chain)
        throw ArgumentError("layer " + std::to_string(i) + ": in_channels " +
                            std::to_string(cl->in_channels) + " does not chain from " +
                            std::to_string(chain));
      chain = cl->out_channels;
    } else {
      const auto& pl = std::get<PoolLayerSpec>(layers[i]);
      if (pl.kernel < 1 || pl.stride < 1)
        throw ArgumentError("layer " + std::to_string(i) + ": pool kernel and stride must be >= 1");
    }
  }
}

int64_t NetworkSpec::input_channels() const {
  for (const auto& l : layers)
    if (const auto* cl = std::get_if<ConvLayerSpec>(&l)) return cl->in_channels;
  throw ArgumentError("network has no conv layer");
}

int64_t NetworkSpec::output_channels() const {
  for (size_t i = layers.size(); i-- > 0;)
    if (const auto* cl = std::get_if<ConvLayerSpec>(&layers[i])) return cl->out_channels;
  throw ArgumentError("network has no conv layer");
}

size_t NetworkSpec::conv_count() const {
  size_t n = 0;
  for (const auto& l : layers)
    if (std::holds_alternative<ConvLayerSpec>(l)) ++n;
  return n;
}

ReceptiveFieldReport receptive_field(const NetworkSpec& net) {
  if (net.layers.empty()) throw ArgumentError("receptive_field: empty network");
  ReceptiveFieldReport report;
  int64_t rf = 1, jump = 1;
  for (const auto& l : net.layers) {
    int64_t kernel, dilation, stride;
    if (const auto* cl = std::get_if<ConvLayerSpec>(&l)) {
      kernel = cl->kernel;
      dilation = cl->dilation;
      stride = cl->stride;
    } else {
      const auto& pl = std::get<PoolLayerSpec>(l);
      kernel = pl.kernel;
      dilation = 1;
      stride = pl.stride;
    }
    rf += (kernel - 1) * dilation * jump;
    jump *= stride;
    report.per_layer.push_back({rf, rf, jump, jump});
  }
  return report;
}

NetworkSpec rewrite_dense(const NetworkSpec& net, const std::set<size_t>& ablate,
                          RewriteMode mode) {
  net.validate();
  if (ablate.empty()) return net;
  for (size_t idx : ablate) {
    if (idx >= net.layers.size())
      throw ArgumentError("rewrite: layer index " + std::to_string(idx) + " out of range");
    const auto* pl = std::get_if<PoolLayerSpec>(&net.layers[idx]);
    if (!pl) throw ArgumentError("rewrite: layer " + std::to_string(idx) + " is not a pool layer");
    if (pl->stride < 2)
      throw ArgumentError("rewrite: pool layer " + std::to_string(idx) + " has stride < 2");
  }
  NetworkSpec out;
  int64_t dilation_factor = 1;
  for (size_t i = 0; i < net.layers.size(); ++i) {
    if (ablate.count(i)) {
      const auto& pl = std::get<PoolLayerSpec>(net.layers[i]);
      if (mode == RewriteMode::keep_pool_unstride) {
        PoolLayerSpec kept = pl;
        kept.stride = 1;
        out.layers.push_back(kept);
      }
      dilation_factor *= pl.stride;
      continue;
    }
    if (const auto* cl = std::get_if<ConvLayerSpec>(&net.layers[i])) {
      ConvLayerSpec next = *cl;
      next.dilation *= dilation_factor;
      next.padding = PaddingSpec{0, PadMode::zero};
      out.layers.push_back(next);
    } else {
      out.layers.push_back(net.layers[i]);
    }
  }
  return out;
}

std::string write_netspec(const NetworkSpec& net) {
  std::ostringstream os;
  for (const auto& l : net.layers) {
    if (const auto* cl = std::get_if<ConvLayerSpec>(&l)) {
      os << "conv in=" << cl->in_channels << " out=" << cl->out_channels << " k=" << cl->kernel
         << " d=" << cl->dilation << " s=" << cl->stride << " pad=" << cl->padding.width << ":"
         << (cl->padding.mode == PadMode::zero ? "zero" : "reflect")
         << " relu=" << (cl->truncation ? 1 : 0) << "\n";
    } else {
      const auto& pl = std::get<PoolLayerSpec>(l);
      os << "pool k=" << pl.kernel << " s=" << pl.stride << "\n";
    }
  }
  return os.str();
}

namespace {

int64_t parse_int(const std::string& token, const std::string& line) {
  try {
    size_t pos = 0;
    int64_t v = std::stoll(token, &pos);
    if (pos != token.size()) throw std::invalid_argument(token);
    return v;
  } catch (const std::exception&) {
    throw DataError("netspec: bad integer '" + token + "' in line: " + line);
  }
}

}  // namespace

NetworkSpec parse_netspec(const std::string& text) {
  NetworkSpec net;
  std::istringstream is(text);
  std::string line;
  while (std::getline(is, line)) {
    if (auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    std::istringstream ls(line);
    std::string kind;
    if (!(ls >> kind)) continue;  // blank line
    std::string tok;
    if (kind == "conv") {
      ConvLayerSpec cl;
      bool has_in = false, has_out = false, has_k = false, has_pad = false, has_relu = false;
      while (ls >> tok) {
        auto eq = tok.find('=');
        if (eq == std::string::npos) throw DataError("netspec: bad token '" + tok + "'");
        std::string key = tok.substr(0, eq), val = tok.substr(eq + 1);
        if (key == "in") { cl.in_channels = parse_int(val, line); has_in = true; }
        else if (key == "out") { cl.out_channels = parse_int(val, line); has_out = true; }
        else if (key == "k") { cl.kernel = parse_int(val, line); has_k = true; }
        else if (key == "d") cl.dilation = parse_int(val, line);
        else if (key == "s") cl.stride = parse_int(val, line);
        else if (key == "pad") {
          auto colon = val.find(':');
          if (colon == std::string::npos) throw DataError("netspec: bad pad '" + val + "'");
          cl.padding.width = parse_int(val.substr(0, colon), line);
          std::string mode = val.substr(colon + 1);
          if (mode == "zero") cl.padding.mode = PadMode::zero;
          else if (mode == "reflect") cl.padding.mode = PadMode::reflect;
          else throw DataError("netspec: unknown pad mode '" + mode + "'");
          has_pad = true;
        } else if (key == "relu") { cl.truncation = parse_int(val, line) != 0; has_relu = true; }
        else throw DataError("netspec: unknown conv field '" + key + "'");
      }
      if (!has_in || !has_out || !has_k || !has_pad || !has_relu)
        throw DataError("netspec: incomplete conv line: " + line);
      net.layers.emplace_back(cl);
    } else if (kind == "pool") {
      PoolLayerSpec pl;
      bool has_k = false;
      while (ls >> tok) {
        auto eq = tok.find('=');
        if (eq == std::string::npos) throw DataError("netspec: bad token '" + tok + "'");
        std::string key = tok.substr(0, eq), val = tok.substr(eq + 1);
        if (key == "k") { pl.kernel = parse_int(val, line); has_k = true; }
        else if (key == "s") pl.stride = parse_int(val, line);
        else throw DataError("netspec: unknown pool field '" + key + "'");
      }
      if (!has_k) throw DataError("netspec: incomplete pool line: " + line);
      net.layers.emplace_back(pl);
    } else {
      throw DataError("netspec: unknown layer kind '" + kind + "'");
    }
  }
  net.validate();
  return net;
}

void save_netspec(const std::string& path, const NetworkSpec& net) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw DataError("cannot write " + path);
  os << write_netspec(net);
  if (!os) throw DataError("write failed for " + path);
}

NetworkSpec load_netspec(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw DataError("cannot open " + path);
  std::ostringstream buf;
  buf << is.rdbuf();
  return parse_netspec(buf.str());
}

void save_weights(const std::string& path, const NetworkWeights& w) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw DataError("cannot write " + path);
  os.write("DILW", 4);
  binio::put_u32(os, 1);
  binio::put_u32(os, static_cast<uint32_t>(w.filters.size()));
  for (const auto& f : w.filters) {
    binio::put_u32(os, static_cast<uint32_t>(f.out_channels));
    binio::put_u32(os, static_cast<uint32_t>(f.in_channels));
    binio::put_u32(os, static_cast<uint32_t>(f.kh));
    binio::put_u32(os, static_cast<uint32_t>(f.kw));
    for (float v : f.weights) binio::put_f32(os, v);
    for (float v : f.bias) binio::put_f32(os, v);
  }
  if (!os) throw DataError("write failed for " + path);
}

NetworkWeights load_weights(const std::string& path) {
  binio::Reader r(path);
  char magic[4];
  r.bytes(magic, 4, "magic");
  if (std::string(magic, 4) != "DILW") throw FormatError(path + ": bad magic", 0);
  uint32_t version = r.u32("version");
  if (version != 1) throw FormatError(path + ": unsupported version " + std::to_string(version), 4);
  uint32_t count = r.u32("layer count");
  NetworkWeights w;
  for (uint32_t i = 0; i < count; ++i) {
    uint32_t out_c = r.u32("out_channels");
    uint32_t in_c = r.u32("in_channels");
    uint32_t kh = r.u32("kh");
    uint32_t kw = r.u32("kw");
    ConvFilter f(out_c, in_c, kh, kw);
    for (auto& v : f.weights) v = r.f32("weights");
    for (auto& v : f.bias) v = r.f32("biases");
    w.filters.push_back(std::move(f));
  }
  return w;
}

}  // namespace dilnet
