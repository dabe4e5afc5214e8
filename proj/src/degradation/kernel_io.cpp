#include "kbsr/degradation/kernel_io.hpp"

#include <bit>
#include <fstream>

#include "json.hpp"

static_assert(std::endian::native == std::endian::little,
              "kernel files are little-endian float64; big-endian hosts need byte swapping");

namespace kbsr {
namespace {

using nlohmann::json;

void write_doubles(std::ofstream& out, const double* data, std::streamsize n) {
  out.write(reinterpret_cast<const char*>(data), n * static_cast<std::streamsize>(sizeof(double)));
}

void read_doubles(std::ifstream& in, double* data, std::streamsize n) {
  in.read(reinterpret_cast<char*>(data), n * static_cast<std::streamsize>(sizeof(double)));
  if (!in) throw std::runtime_error("kernel file truncated");
}

json read_sidecar(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error(path.string() + ": cannot open sidecar");
  return json::parse(in);
}

std::filesystem::path sidecar_path(const std::filesystem::path& path) {
  return std::filesystem::path(path.string() + ".json");
}

}  // namespace

void save_kernel(const std::filesystem::path& path, const Kernel& kernel,
                 const KernelSidecar& sidecar) {
  require_kernel(kernel, "save_kernel");
  if (kernel.dim(0) != sidecar.k)
    throw std::invalid_argument("save_kernel: sidecar k does not match kernel");

  std::ofstream bin(path, std::ios::binary);
  if (!bin) throw std::runtime_error(path.string() + ": cannot open for writing");
  write_doubles(bin, kernel.data(), kernel.size());
  if (!bin) throw std::runtime_error(path.string() + ": write failed");

  json j;
  j["k"] = sidecar.k;
  if (sidecar.spec) {
    j["sigma_x"] = sidecar.spec->sigma_x;
    j["sigma_y"] = sidecar.spec->sigma_y;
    j["theta"] = sidecar.spec->theta;
  } else {
    j["sigma_x"] = nullptr;
    j["sigma_y"] = nullptr;
    j["theta"] = nullptr;
  }
  j["down_mode"] = to_string(sidecar.down_mode);
  std::ofstream side(sidecar_path(path));
  side << j.dump(2) << "\n";
  if (!side) throw std::runtime_error(path.string() + ".json: write failed");
}

Kernel load_kernel(const std::filesystem::path& path, KernelSidecar* sidecar) {
  const json j = read_sidecar(sidecar_path(path));
  KernelSidecar sc;
  sc.k = j.at("k").get<int>();
  if (!j.at("sigma_x").is_null())
    sc.spec = GaussianSpec{j.at("sigma_x").get<double>(), j.at("sigma_y").get<double>(),
                           j.at("theta").get<double>()};
  sc.down_mode = parse_down_mode(j.at("down_mode").get<std::string>());

  std::ifstream bin(path, std::ios::binary);
  if (!bin) throw std::runtime_error(path.string() + ": cannot open for reading");
  Kernel kernel({sc.k, sc.k});
  read_doubles(bin, kernel.data(), kernel.size());
  require_kernel(kernel, "load_kernel");
  if (sidecar) *sidecar = sc;
  return kernel;
}

void save_code_context(const std::filesystem::path& path, const KernelCodeContext& ctx) {
  std::ofstream bin(path, std::ios::binary);
  if (!bin) throw std::runtime_error(path.string() + ": cannot open for writing");
  // Row-by-row so the layout is independent of Eigen's internal storage order.
  for (int i = 0; i < ctx.a; ++i) {
    const Eigen::VectorXd row = ctx.basis.row(i);
    write_doubles(bin, row.data(), row.size());
  }
  write_doubles(bin, ctx.mean.data(), ctx.mean.size());
  if (!bin) throw std::runtime_error(path.string() + ": write failed");

  json j;
  j["a"] = ctx.a;
  j["k"] = ctx.k;
  j["seed"] = ctx.seed;
  std::ofstream side(sidecar_path(path));
  side << j.dump(2) << "\n";
  if (!side) throw std::runtime_error(path.string() + ".json: write failed");
}

KernelCodeContext load_code_context(const std::filesystem::path& path) {
  const json j = read_sidecar(sidecar_path(path));
  KernelCodeContext ctx;
  ctx.a = j.at("a").get<int>();
  ctx.k = j.at("k").get<int>();
  ctx.seed = j.at("seed").get<uint64_t>();
  const Eigen::Index d = static_cast<Eigen::Index>(ctx.k) * ctx.k;

  std::ifstream bin(path, std::ios::binary);
  if (!bin) throw std::runtime_error(path.string() + ": cannot open for reading");
  ctx.basis.resize(ctx.a, d);
  Eigen::VectorXd row(d);
  for (int i = 0; i < ctx.a; ++i) {
    read_doubles(bin, row.data(), d);
    ctx.basis.row(i) = row.transpose();
  }
  ctx.mean.resize(d);
  read_doubles(bin, ctx.mean.data(), d);
  return ctx;
}

}  // namespace kbsr
