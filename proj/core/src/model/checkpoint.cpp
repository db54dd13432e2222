#include "seqlab/model/checkpoint.hpp"

#include <algorithm>
#include <bit>
#include <cstring>
#include <fstream>

#include "seqlab/error.hpp"

namespace seqlab {
namespace {

static_assert(std::endian::native == std::endian::little,
              "checkpoint I/O assumes a little-endian host");

template <typename T>
void put(std::ostream& out, T value) {
  out.write(reinterpret_cast<const char*>(&value), sizeof(T));
}

template <typename T>
T get(std::istream& in) {
  T value{};
  in.read(reinterpret_cast<char*>(&value), sizeof(T));
  if (!in) throw IoError("truncated checkpoint stream");
  return value;
}

void put_config(std::ostream& out, const ModelConfig& c) {
  for (std::uint64_t v : {c.vocab_size, c.d_model, c.n_heads, c.n_enc_layers, c.n_dec_layers,
                          c.d_ff, c.max_len}) {
    put<std::uint64_t>(out, v);
  }
  put<double>(out, c.dropout);
  put<std::uint8_t>(out, c.tie_embeddings ? 1 : 0);
}

ModelConfig get_config(std::istream& in) {
  ModelConfig c;
  c.vocab_size = get<std::uint64_t>(in);
  c.d_model = get<std::uint64_t>(in);
  c.n_heads = get<std::uint64_t>(in);
  c.n_enc_layers = get<std::uint64_t>(in);
  c.n_dec_layers = get<std::uint64_t>(in);
  c.d_ff = get<std::uint64_t>(in);
  c.max_len = get<std::uint64_t>(in);
  c.dropout = get<double>(in);
  c.tie_embeddings = get<std::uint8_t>(in) != 0;
  return c;
}

constexpr std::uint32_t kMaxPathLength = 4096;
constexpr std::uint32_t kMaxRank = 8;

}  // namespace

void write_tensor_records(std::ostream& out, const std::map<std::string, Tensor>& tensors) {
  put<std::uint64_t>(out, tensors.size());
  for (const auto& [path, t] : tensors) {
    put<std::uint32_t>(out, static_cast<std::uint32_t>(path.size()));
    out.write(path.data(), static_cast<std::streamsize>(path.size()));
    put<std::uint32_t>(out, static_cast<std::uint32_t>(t.rank()));
    for (std::size_t d : t.shape()) put<std::uint64_t>(out, d);
    out.write(reinterpret_cast<const char*>(t.data().data()),
              static_cast<std::streamsize>(t.size() * sizeof(double)));
  }
}

std::map<std::string, Tensor> read_tensor_records(std::istream& in) {
  std::map<std::string, Tensor> tensors;
  const auto count = get<std::uint64_t>(in);
  for (std::uint64_t i = 0; i < count; ++i) {
    const auto len = get<std::uint32_t>(in);
    if (len == 0 || len > kMaxPathLength) throw IoError("corrupt tensor path length");
    std::string path(len, '\0');
    in.read(path.data(), len);
    const auto rank = get<std::uint32_t>(in);
    if (rank > kMaxRank) throw IoError("corrupt tensor rank in record " + path);
    Shape shape(rank);
    for (auto& d : shape) {
      d = get<std::uint64_t>(in);
      if (d == 0 || d > (std::uint64_t{1} << 32)) throw IoError("corrupt dimension in " + path);
    }
    std::vector<double> data(num_elements(shape));
    in.read(reinterpret_cast<char*>(data.data()),
            static_cast<std::streamsize>(data.size() * sizeof(double)));
    if (!in) throw IoError("truncated values for " + path);
    if (!tensors.emplace(path, Tensor(std::move(shape), std::move(data), true)).second) {
      throw IoError("duplicate tensor record " + path);
    }
  }
  return tensors;
}

void write_checkpoint(const std::filesystem::path& path, const ModelConfig& config,
                      const Parameters& parameters) {
  // Write to a sibling file first so readers never observe a partial checkpoint.
  const auto tmp = std::filesystem::path(path.string() + ".tmp");
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot open " + tmp.string() + " for writing");
    out.write(kCheckpointMagic, sizeof(kCheckpointMagic));
    put<std::uint32_t>(out, kCheckpointVersion);
    put_config(out, config);
    std::map<std::string, Tensor> tensors(parameters.begin(), parameters.end());
    write_tensor_records(out, tensors);
    out.flush();
    if (!out) throw IoError("failed writing " + tmp.string());
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) throw IoError("cannot move checkpoint into place at " + path.string() + ": " + ec.message());
}

Checkpoint read_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open checkpoint " + path.string());
  char magic[sizeof(kCheckpointMagic)];
  in.read(magic, sizeof(magic));
  if (!in || !std::equal(std::begin(magic), std::end(magic), std::begin(kCheckpointMagic))) {
    throw IoError(path.string() + " is not a seqlab checkpoint");
  }
  const auto version = get<std::uint32_t>(in);
  if (version != kCheckpointVersion) {
    throw IoError("unsupported checkpoint version " + std::to_string(version));
  }
  Checkpoint ckpt;
  ckpt.config = get_config(in);
  for (auto& [name, t] : read_tensor_records(in)) ckpt.parameters.add(name, std::move(t));
  return ckpt;
}

}  // namespace seqlab
