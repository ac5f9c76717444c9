#include "evfuse/io.hpp"

#include <png.h>

#include <algorithm>
#include <cctype>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <sstream>

namespace evfuse::io {

namespace fs = std::filesystem;

// ---- Decimal seconds -----------------------------------------------------------

std::int64_t parse_decimal_seconds(const std::string& text) {
  if (text.empty()) throw DataError("empty timestamp");
  std::size_t i = 0;
  if (text[i] == '+') ++i;
  std::int64_t whole = 0;
  bool any_digit = false;
  for (; i < text.size() && std::isdigit(static_cast<unsigned char>(text[i])); ++i) {
    whole = whole * 10 + (text[i] - '0');
    any_digit = true;
    if (whole > 9'000'000'000) throw DataError("timestamp out of range: " + text);
  }
  std::int64_t frac = 0;
  int frac_digits = 0;
  if (i < text.size() && text[i] == '.') {
    ++i;
    for (; i < text.size() && std::isdigit(static_cast<unsigned char>(text[i])); ++i) {
      ++frac_digits;
      if (frac_digits > 6) {
        if (text[i] != '0') {
          throw DataError("sub-microsecond timestamp digits are not supported: " + text);
        }
        continue;
      }
      frac = frac * 10 + (text[i] - '0');
      any_digit = true;
    }
  }
  if (!any_digit || i != text.size()) {
    throw DataError("malformed timestamp: " + text);
  }
  for (int d = frac_digits; d < 6; ++d) frac *= 10;
  return whole * 1'000'000 + frac;
}

namespace {

std::string format_micros_as_seconds(std::int64_t micros) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%lld.%06lld",
                static_cast<long long>(micros / 1'000'000),
                static_cast<long long>(micros % 1'000'000));
  return buf;
}

long parse_long(const std::string& tok, const char* what, int line_no) {
  long v = 0;
  const auto res = std::from_chars(tok.data(), tok.data() + tok.size(), v);
  if (res.ec != std::errc{} || res.ptr != tok.data() + tok.size()) {
    throw DataError(std::string("line ") + std::to_string(line_no) + ": malformed " + what +
                    " '" + tok + "'");
  }
  return v;
}

double parse_double(const std::string& tok, const char* what, int line_no) {
  try {
    std::size_t pos = 0;
    const double v = std::stod(tok, &pos);
    if (pos != tok.size()) throw std::invalid_argument(tok);
    return v;
  } catch (const std::exception&) {
    throw DataError(std::string("line ") + std::to_string(line_no) + ": malformed " + what +
                    " '" + tok + "'");
  }
}

std::vector<std::string> split_ws(const std::string& line) {
  std::vector<std::string> out;
  std::istringstream ss(line);
  std::string tok;
  while (ss >> tok) out.push_back(tok);
  return out;
}

}  // namespace

// ---- Event files -----------------------------------------------------------------

EventFileData read_events(const fs::path& path, PolarityConvention convention) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open event file " + path.string());

  EventFileData data;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    if (line[0] == '#') {
      // Optional geometry header: "# width height".
      const auto toks = split_ws(line.substr(1));
      if (data.width < 0 && toks.size() == 2) {
        try {
          data.width = static_cast<int>(parse_long(toks[0], "width", line_no));
          data.height = static_cast<int>(parse_long(toks[1], "height", line_no));
        } catch (const DataError&) {
          data.width = data.height = -1;  // plain comment
        }
      }
      continue;
    }
    const auto toks = split_ws(line);
    if (toks.size() != 4) {
      throw DataError("line " + std::to_string(line_no) + ": expected 't x y p', got '" + line +
                      "'");
    }
    std::int64_t micros;
    try {
      micros = parse_decimal_seconds(toks[0]);
    } catch (const DataError& e) {
      throw DataError("line " + std::to_string(line_no) + ": " + e.what());
    }
    const long x = parse_long(toks[1], "x", line_no);
    const long y = parse_long(toks[2], "y", line_no);
    const long p = parse_long(toks[3], "polarity", line_no);

    int polarity;
    if (convention == PolarityConvention::ZeroOne) {
      if (p == 0) {
        polarity = -1;
      } else if (p == 1) {
        polarity = +1;
      } else {
        throw DataError("line " + std::to_string(line_no) + ": polarity must be 0 or 1, got " +
                        std::to_string(p));
      }
    } else {
      if (p == 0) {  // hardware sync record: no intensity information
        ++data.sync_dropped;
        continue;
      }
      if (p != 1 && p != -1) {
        throw DataError("line " + std::to_string(line_no) +
                        ": polarity must be -1, 0 or +1, got " + std::to_string(p));
      }
      polarity = static_cast<int>(p);
    }
    data.events.push_back({Timestamp::from_micros(micros), static_cast<std::int16_t>(x),
                           static_cast<std::int16_t>(y), static_cast<std::int8_t>(polarity)});
  }
  return data;
}

void write_events(const fs::path& path, std::span<const Event> events, int width, int height) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write event file " + path.string());
  out << "# " << width << ' ' << height << '\n';
  for (const Event& e : events) {
    out << format_micros_as_seconds(e.t.micros) << ' ' << e.x << ' ' << e.y << ' '
        << (e.polarity > 0 ? 1 : 0) << '\n';
  }
  if (!out) throw DataError("failed writing event file " + path.string());
}

// ---- PGM -----------------------------------------------------------------------

namespace {

int pgm_read_token(std::istream& in) {
  // Skips whitespace and '#' comments per the PNM header grammar.
  int c = in.get();
  while (c != EOF) {
    if (c == '#') {
      while (c != EOF && c != '\n') c = in.get();
    } else if (std::isspace(c)) {
      c = in.get();
    } else {
      break;
    }
  }
  if (c == EOF) throw DataError("truncated PGM header");
  int value = 0;
  while (c != EOF && std::isdigit(c)) {
    value = value * 10 + (c - '0');
    c = in.get();
  }
  return value;
}

ImageF read_pgm(const fs::path& path, int* bit_depth) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open image " + path.string());
  char magic[2] = {0, 0};
  in.read(magic, 2);
  if (magic[0] != 'P' || magic[1] != '5') {
    throw DataError("unsupported PGM (expect binary P5): " + path.string());
  }
  const int w = pgm_read_token(in);
  const int h = pgm_read_token(in);
  const int maxval = pgm_read_token(in);
  if (w <= 0 || h <= 0 || (maxval != 255 && maxval != 65535)) {
    throw DataError("unsupported PGM geometry/depth in " + path.string());
  }
  if (bit_depth) *bit_depth = maxval == 255 ? 8 : 16;

  ImageF img(w, h);
  if (maxval == 255) {
    std::vector<unsigned char> row(w);
    for (int y = 0; y < h; ++y) {
      in.read(reinterpret_cast<char*>(row.data()), w);
      if (!in) throw DataError("truncated PGM data in " + path.string());
      for (int x = 0; x < w; ++x) img(x, y) = row[x] / 255.0;
    }
  } else {
    std::vector<unsigned char> row(std::size_t(w) * 2);
    for (int y = 0; y < h; ++y) {
      in.read(reinterpret_cast<char*>(row.data()), row.size());
      if (!in) throw DataError("truncated PGM data in " + path.string());
      for (int x = 0; x < w; ++x) {
        const unsigned v = (unsigned(row[2 * x]) << 8) | row[2 * x + 1];  // big-endian
        img(x, y) = v / 65535.0;
      }
    }
  }
  return img;
}

void write_pgm(const fs::path& path, const ImageF& image, int bit_depth) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write image " + path.string());
  const int maxval = bit_depth == 8 ? 255 : 65535;
  out << "P5\n" << image.width() << ' ' << image.height() << '\n' << maxval << '\n';
  if (bit_depth == 8) {
    std::vector<unsigned char> row(image.width());
    for (int y = 0; y < image.height(); ++y) {
      for (int x = 0; x < image.width(); ++x) {
        row[x] = static_cast<unsigned char>(
            std::lround(std::clamp(image(x, y), 0.0, 1.0) * 255.0));
      }
      out.write(reinterpret_cast<const char*>(row.data()), row.size());
    }
  } else {
    std::vector<unsigned char> row(std::size_t(image.width()) * 2);
    for (int y = 0; y < image.height(); ++y) {
      for (int x = 0; x < image.width(); ++x) {
        const unsigned v = static_cast<unsigned>(
            std::lround(std::clamp(image(x, y), 0.0, 1.0) * 65535.0));
        row[2 * x] = static_cast<unsigned char>(v >> 8);
        row[2 * x + 1] = static_cast<unsigned char>(v & 0xff);
      }
      out.write(reinterpret_cast<const char*>(row.data()), row.size());
    }
  }
  if (!out) throw DataError("failed writing image " + path.string());
}

// ---- PNG (libpng) -------------------------------------------------------------

struct PngReader {
  png_structp png = nullptr;
  png_infop info = nullptr;
  std::FILE* fp = nullptr;
  ~PngReader() {
    if (png) png_destroy_read_struct(&png, info ? &info : nullptr, nullptr);
    if (fp) std::fclose(fp);
  }
};

ImageF read_png(const fs::path& path, int* bit_depth_out) {
  PngReader r;
  r.fp = std::fopen(path.c_str(), "rb");
  if (!r.fp) throw DataError("cannot open image " + path.string());
  r.png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  if (!r.png) throw DataError("libpng init failed");
  r.info = png_create_info_struct(r.png);
  if (!r.info) throw DataError("libpng init failed");
  if (setjmp(png_jmpbuf(r.png))) {
    throw DataError("failed decoding PNG " + path.string());
  }
  png_init_io(r.png, r.fp);
  // Normalize to 8/16-bit gray (or RGB reduced by luma below), host-endian.
  png_read_png(r.png, r.info,
               PNG_TRANSFORM_STRIP_ALPHA | PNG_TRANSFORM_PACKING | PNG_TRANSFORM_EXPAND |
                   PNG_TRANSFORM_SWAP_ENDIAN,
               nullptr);
  const int w = static_cast<int>(png_get_image_width(r.png, r.info));
  const int h = static_cast<int>(png_get_image_height(r.png, r.info));
  const int depth = png_get_bit_depth(r.png, r.info);
  const int channels = png_get_channels(r.png, r.info);
  if ((depth != 8 && depth != 16) || (channels != 1 && channels != 3)) {
    throw DataError("unsupported PNG layout in " + path.string());
  }
  if (bit_depth_out) *bit_depth_out = depth;
  png_bytepp rows = png_get_rows(r.png, r.info);

  ImageF img(w, h);
  const double maxval = depth == 8 ? 255.0 : 65535.0;
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      double v;
      if (depth == 8) {
        const png_bytep px = rows[y] + std::size_t(x) * channels;
        v = channels == 1 ? px[0] : 0.299 * px[0] + 0.587 * px[1] + 0.114 * px[2];
      } else {
        const png_uint_16p px = reinterpret_cast<png_uint_16p>(rows[y]) + std::size_t(x) * channels;
        v = channels == 1 ? px[0] : 0.299 * px[0] + 0.587 * px[1] + 0.114 * px[2];
      }
      img(x, y) = v / maxval;
    }
  }
  return img;
}

struct PngWriter {
  png_structp png = nullptr;
  png_infop info = nullptr;
  std::FILE* fp = nullptr;
  ~PngWriter() {
    if (png) png_destroy_write_struct(&png, info ? &info : nullptr);
    if (fp) std::fclose(fp);
  }
};

void write_png_gray(const fs::path& path, const ImageF& image, int bit_depth) {
  PngWriter wr;
  wr.fp = std::fopen(path.c_str(), "wb");
  if (!wr.fp) throw DataError("cannot write image " + path.string());
  wr.png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  wr.info = png_create_info_struct(wr.png);
  if (!wr.png || !wr.info || setjmp(png_jmpbuf(wr.png))) {
    throw DataError("failed encoding PNG " + path.string());
  }
  png_init_io(wr.png, wr.fp);
  const int w = image.width();
  const int h = image.height();
  png_set_IHDR(wr.png, wr.info, w, h, bit_depth, PNG_COLOR_TYPE_GRAY, PNG_INTERLACE_NONE,
               PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  std::vector<std::vector<unsigned char>> rows(h);
  std::vector<png_bytep> row_ptrs(h);
  for (int y = 0; y < h; ++y) {
    rows[y].resize(std::size_t(w) * (bit_depth / 8));
    for (int x = 0; x < w; ++x) {
      if (bit_depth == 8) {
        rows[y][x] = static_cast<unsigned char>(
            std::lround(std::clamp(image(x, y), 0.0, 1.0) * 255.0));
      } else {
        const unsigned v = static_cast<unsigned>(
            std::lround(std::clamp(image(x, y), 0.0, 1.0) * 65535.0));
        rows[y][2 * x] = static_cast<unsigned char>(v >> 8);  // network order
        rows[y][2 * x + 1] = static_cast<unsigned char>(v & 0xff);
      }
    }
    row_ptrs[y] = rows[y].data();
  }
  png_set_rows(wr.png, wr.info, row_ptrs.data());
  png_write_png(wr.png, wr.info, PNG_TRANSFORM_IDENTITY, nullptr);
}

}  // namespace

ImageF read_gray_image(const fs::path& path, int* bit_depth) {
  const std::string ext = path.extension().string();
  if (ext == ".pgm") return read_pgm(path, bit_depth);
  if (ext == ".png") return read_png(path, bit_depth);
  throw DataError("unsupported image extension: " + path.string());
}

void write_gray_image(const fs::path& path, const ImageF& image, int bit_depth) {
  if (bit_depth != 8 && bit_depth != 16) throw DataError("bit depth must be 8 or 16");
  const std::string ext = path.extension().string();
  if (ext == ".pgm") return write_pgm(path, image, bit_depth);
  if (ext == ".png") return write_png_gray(path, image, bit_depth);
  throw DataError("unsupported image extension: " + path.string());
}

void write_rgb_image(const fs::path& path, const Image<Rgb8>& image) {
  if (path.extension() != ".png") throw DataError("color output must be .png");
  PngWriter wr;
  wr.fp = std::fopen(path.c_str(), "wb");
  if (!wr.fp) throw DataError("cannot write image " + path.string());
  wr.png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  wr.info = png_create_info_struct(wr.png);
  if (!wr.png || !wr.info || setjmp(png_jmpbuf(wr.png))) {
    throw DataError("failed encoding PNG " + path.string());
  }
  png_init_io(wr.png, wr.fp);
  png_set_IHDR(wr.png, wr.info, image.width(), image.height(), 8, PNG_COLOR_TYPE_RGB,
               PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  std::vector<std::vector<unsigned char>> rows(image.height());
  std::vector<png_bytep> row_ptrs(image.height());
  for (int y = 0; y < image.height(); ++y) {
    rows[y].resize(std::size_t(image.width()) * 3);
    for (int x = 0; x < image.width(); ++x) {
      const Rgb8 px = image(x, y);
      rows[y][3 * x] = px.r;
      rows[y][3 * x + 1] = px.g;
      rows[y][3 * x + 2] = px.b;
    }
    row_ptrs[y] = rows[y].data();
  }
  png_set_rows(wr.png, wr.info, row_ptrs.data());
  png_write_png(wr.png, wr.info, PNG_TRANSFORM_IDENTITY, nullptr);
}

// ---- Frame index ----------------------------------------------------------------

std::vector<FrameIndexEntry> read_frame_index(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open frame index " + path.string());
  std::vector<FrameIndexEntry> entries;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty() || line[0] == '#') continue;
    std::replace(line.begin(), line.end(), ',', ' ');
    const auto toks = split_ws(line);
    if (toks.size() != 3) {
      throw DataError("frame index line " + std::to_string(line_no) +
                      ": expected 'timestamp,filename,exposure'");
    }
    FrameIndexEntry e;
    e.t_mid_micros = parse_decimal_seconds(toks[0]);
    e.filename = toks[1];
    e.exposure = parse_double(toks[2], "exposure", line_no);
    if (e.exposure < 0.0) {
      throw DataError("frame index line " + std::to_string(line_no) + ": negative exposure");
    }
    entries.push_back(std::move(e));
  }
  return entries;
}

void write_frame_index(const fs::path& path, std::span<const FrameIndexEntry> entries) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write frame index " + path.string());
  for (const FrameIndexEntry& e : entries) {
    char exp_buf[32];
    std::snprintf(exp_buf, sizeof(exp_buf), "%.6f", e.exposure);
    out << format_micros_as_seconds(e.t_mid_micros) << ',' << e.filename << ',' << exp_buf
        << '\n';
  }
}

std::vector<Frame> read_frames(const fs::path& index_path, const fs::path& frame_dir) {
  const auto entries = read_frame_index(index_path);
  std::vector<Frame> frames;
  frames.reserve(entries.size());
  for (const FrameIndexEntry& e : entries) {
    Frame f;
    f.t_mid = Timestamp::from_micros(e.t_mid_micros);
    f.exposure = e.exposure;
    f.response = read_gray_image(frame_dir / e.filename);
    if (!frames.empty() && !f.response.same_shape(frames.front().response)) {
      throw DataError("frame geometry mismatch at " + e.filename);
    }
    frames.push_back(std::move(f));
  }
  return frames;
}

// ---- CRF / kernel ---------------------------------------------------------------

CrfModel read_crf(const fs::path& path, double sigma2_im, double f_w_floor) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open CRF file " + path.string());
  std::vector<double> irr, resp;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty() || line[0] == '#') continue;
    const auto toks = split_ws(line);
    if (toks.size() != 2) {
      throw DataError("CRF line " + std::to_string(line_no) + ": expected 'irradiance response'");
    }
    irr.push_back(parse_double(toks[0], "irradiance", line_no));
    resp.push_back(parse_double(toks[1], "response", line_no));
  }
  if (irr.size() != CrfModel::kTableSize) {
    throw DataError("CRF file must hold exactly 256 samples, got " + std::to_string(irr.size()));
  }
  try {
    return CrfModel::from_samples(irr, resp, sigma2_im, f_w_floor);
  } catch (const std::invalid_argument& e) {
    throw DataError(std::string("invalid CRF table: ") + e.what());
  }
}

void write_crf(const fs::path& path, const CrfModel& crf) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write CRF file " + path.string());
  out << "# irradiance response\n";
  const auto irr = crf.irradiance_table();
  const auto resp = crf.response_table();
  char buf[64];
  for (int i = 0; i < CrfModel::kTableSize; ++i) {
    std::snprintf(buf, sizeof(buf), "%.10f %.10f\n", irr[i], resp[i]);
    out << buf;
  }
}

Kernel read_kernel(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open kernel file " + path.string());
  std::vector<KernelTap> taps;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty() || line[0] == '#') continue;
    const auto toks = split_ws(line);
    if (toks.size() != 3) {
      throw DataError("kernel line " + std::to_string(line_no) + ": expected 'dx dy weight'");
    }
    taps.push_back({static_cast<int>(parse_long(toks[0], "dx", line_no)),
                    static_cast<int>(parse_long(toks[1], "dy", line_no)),
                    parse_double(toks[2], "weight", line_no)});
  }
  if (taps.empty()) throw DataError("kernel file has no taps: " + path.string());
  return Kernel::custom(std::move(taps));
}

// ---- Manifest / dataset -----------------------------------------------------------

namespace {

std::vector<std::pair<std::string, std::string>> read_kv_file(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open " + path.string());
  std::vector<std::pair<std::string, std::string>> kv;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw DataError(path.string() + " line " + std::to_string(line_no) +
                      ": expected key=value");
    }
    auto trim = [](std::string s) {
      const auto b = s.find_first_not_of(" \t\r");
      const auto e = s.find_last_not_of(" \t\r");
      return b == std::string::npos ? std::string() : s.substr(b, e - b + 1);
    };
    kv.emplace_back(trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
  }
  return kv;
}

}  // namespace

double profile_sigma2_im(const std::string& profile) {
  if (profile == "davis240c") return 7e5;
  if (profile == "flir") return 7e7;
  if (profile == "sim") return CrfModel::kDefaultSigma2Im;
  throw DataError("unknown sensor profile '" + profile + "' (davis240c, flir, sim)");
}

DatasetManifest DatasetManifest::load(const fs::path& path) {
  DatasetManifest m;
  const fs::path base = path.parent_path();
  for (const auto& [key, value] : read_kv_file(path)) {
    if (key == "width") {
      m.width = static_cast<int>(parse_long(value, "width", 0));
    } else if (key == "height") {
      m.height = static_cast<int>(parse_long(value, "height", 0));
    } else if (key == "events") {
      m.events_path = base / value;
    } else if (key == "frame_index") {
      m.frame_index_path = base / value;
    } else if (key == "frame_dir") {
      m.frame_dir = base / value;
    } else if (key == "crf") {
      m.crf_path = base / value;
    } else if (key == "profile") {
      m.sensor_profile = value;
    } else {
      throw DataError("manifest: unknown key '" + key + "'");
    }
  }
  if (m.width <= 0 || m.height <= 0) throw DataError("manifest: missing geometry");
  if (m.events_path.empty()) throw DataError("manifest: missing events path");
  return m;
}

void DatasetManifest::save(const fs::path& path) const {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write manifest " + path.string());
  const fs::path base = path.parent_path();
  auto rel = [&base](const fs::path& p) { return fs::relative(p, base).string(); };
  out << "width=" << width << "\nheight=" << height << "\n";
  out << "events=" << rel(events_path) << "\n";
  if (!frame_index_path.empty()) out << "frame_index=" << rel(frame_index_path) << "\n";
  if (!frame_dir.empty()) out << "frame_dir=" << rel(frame_dir) << "\n";
  if (crf_path) out << "crf=" << rel(*crf_path) << "\n";
  out << "profile=" << sensor_profile << "\n";
}

Dataset load_dataset(const fs::path& manifest_or_dir, PolarityConvention convention,
                     std::optional<double> sigma2_im_override) {
  fs::path manifest_path = manifest_or_dir;
  if (fs::is_directory(manifest_path)) manifest_path /= "manifest.cfg";
  const DatasetManifest manifest = DatasetManifest::load(manifest_path);

  Dataset ds;
  ds.width = manifest.width;
  ds.height = manifest.height;
  ds.sensor_profile = manifest.sensor_profile;

  EventFileData ev = read_events(manifest.events_path, convention);
  if (ev.width > 0 && (ev.width != ds.width || ev.height != ds.height)) {
    throw DataError("event header geometry disagrees with manifest");
  }
  ds.events = std::move(ev.events);

  const auto report = validate_stream(ds.events, ds.width, ds.height);
  if (!report.accepted()) {
    throw DataError("event stream rejected: " + std::to_string(report.out_of_bounds) +
                    " out-of-bounds, " + std::to_string(report.out_of_order) +
                    " out-of-order, " + std::to_string(report.zero_polarity) +
                    " zero-polarity records");
  }

  if (!manifest.frame_index_path.empty()) {
    ds.frames = read_frames(manifest.frame_index_path,
                            manifest.frame_dir.empty() ? manifest_path.parent_path()
                                                       : manifest.frame_dir);
    if (!ds.frames.empty() && (ds.frames.front().response.width() != ds.width ||
                               ds.frames.front().response.height() != ds.height)) {
      throw DataError("frame geometry disagrees with manifest");
    }
  }

  const double sigma2_im = sigma2_im_override.value_or(profile_sigma2_im(ds.sensor_profile));
  if (manifest.crf_path) {
    ds.crf = read_crf(*manifest.crf_path, sigma2_im);
  } else {
    ds.crf = CrfModel::identity(sigma2_im);
  }
  return ds;
}

// ---- Output ---------------------------------------------------------------------

std::vector<std::int64_t> OutputSchedule::resolve(std::int64_t t_begin_micros,
                                                  std::int64_t t_end_micros,
                                                  std::span<const Event> events) const {
  std::vector<std::int64_t> times;
  switch (kind) {
    case Kind::FixedRate: {
      if (rate_hz <= 0.0) throw DataError("output rate must be positive");
      const double step = kMicrosPerSecond / rate_hz;
      for (int k = 0;; ++k) {
        const std::int64_t t = t_begin_micros + static_cast<std::int64_t>(std::llround(k * step));
        if (t > t_end_micros) break;
        times.push_back(t);
      }
      break;
    }
    case Kind::PerEvent:
      times.reserve(events.size());
      for (const Event& e : events) times.push_back(e.t.micros);
      break;
    case Kind::ExplicitTimes:
      times = times_micros;
      std::sort(times.begin(), times.end());
      break;
  }
  if (times.empty()) throw DataError("empty output schedule");
  return times;
}

std::vector<fs::path> write_output(std::span<const ImageF> intensity_images,
                                   std::span<const std::int64_t> times_micros,
                                   const fs::path& dir, OutputNormalization norm,
                                   int bit_depth, const std::string& prefix) {
  if (intensity_images.size() != times_micros.size()) {
    throw DataError("write_output: one timestamp per image required");
  }
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (!fs::is_directory(dir)) throw DataError("cannot create output directory " + dir.string());

  double lo = 0.0;
  double hi = 1.0;
  if (norm == OutputNormalization::Percentile) {
    std::vector<double> all;
    for (const ImageF& img : intensity_images) {
      all.insert(all.end(), img.begin(), img.end());
    }
    if (!all.empty()) {
      const std::size_t i1 = (all.size() - 1) / 100;
      const std::size_t i99 = (all.size() - 1) * 99 / 100;
      std::nth_element(all.begin(), all.begin() + i1, all.end());
      lo = all[i1];
      std::nth_element(all.begin(), all.begin() + i99, all.end());
      hi = all[i99];
      if (hi <= lo) hi = lo + 1.0;
    }
  }

  std::vector<fs::path> written;
  written.reserve(intensity_images.size());
  for (std::size_t i = 0; i < intensity_images.size(); ++i) {
    const ImageF& src = intensity_images[i];
    ImageF scaled(src.width(), src.height());
    for (std::size_t j = 0; j < src.size(); ++j) {
      scaled[j] = (src[j] - lo) / (hi - lo);
    }
    char name[96];
    std::snprintf(name, sizeof(name), "%s_%06zu_%012lld.pgm", prefix.c_str(), i,
                  static_cast<long long>(times_micros[i]));
    const fs::path out_path = dir / name;
    write_gray_image(out_path, scaled, bit_depth);
    written.push_back(out_path);
  }
  return written;
}

// ---- RunConfig --------------------------------------------------------------------

namespace {

bool parse_bool(const std::string& v, const std::string& key) {
  if (v == "1" || v == "true" || v == "yes") return true;
  if (v == "0" || v == "false" || v == "no") return false;
  throw DataError("config: boolean expected for " + key);
}

double parse_config_double(const std::string& v, const std::string& key) {
  try {
    std::size_t pos = 0;
    const double d = std::stod(v, &pos);
    if (pos != v.size()) throw std::invalid_argument(v);
    return d;
  } catch (const std::exception&) {
    throw DataError("config: number expected for " + key + ", got '" + v + "'");
  }
}

}  // namespace

void RunConfig::set_key(const std::string& key, const std::string& value) {
  if (key == "filter.mode") {
    if (value == "cf") {
      filter.mode = FilterMode::CF;
    } else if (value == "akf") {
      filter.mode = FilterMode::AKF;
    } else if (value == "highpass") {
      filter.mode = FilterMode::HighPass;
    } else {
      throw DataError("config: filter.mode must be cf|akf|highpass");
    }
  } else if (key == "filter.alpha") {
    filter.alpha = parse_config_double(value, key);
  } else if (key == "filter.c") {
    filter.c = parse_config_double(value, key);
  } else if (key == "filter.p_init") {
    filter.P_init = parse_config_double(value, key);
  } else if (key == "filter.l_init") {
    filter.L_init = parse_config_double(value, key);
  } else if (key == "filter.reference_at_interval_start") {
    filter.reference_at_interval_start = parse_bool(value, key);
  } else if (key == "filter.scale_event_jumps") {
    filter.scale_event_jumps = parse_bool(value, key);
  } else if (key == "noise.sigma2_proc") {
    noise.sigma2_proc = parse_config_double(value, key);
  } else if (key == "noise.sigma2_iso") {
    noise.sigma2_iso = parse_config_double(value, key);
  } else if (key == "noise.sigma2_ref") {
    noise.sigma2_ref = parse_config_double(value, key);
  } else if (key == "noise.rho_bar") {
    noise.rho_bar = parse_config_double(value, key);
  } else if (key == "noise.neighborhood_radius") {
    noise.neighborhood_radius = static_cast<int>(parse_config_double(value, key));
  } else if (key == "augment.mode") {
    if (value == "full") {
      augment.mode = AugmentParams::Mode::Full;
    } else if (value == "zoh") {
      augment.mode = AugmentParams::Mode::Zoh;
    } else {
      throw DataError("config: augment.mode must be full|zoh");
    }
  } else if (key == "augment.ct_lo") {
    augment.ct_clamp_lo = parse_config_double(value, key);
  } else if (key == "augment.ct_hi") {
    augment.ct_clamp_hi = parse_config_double(value, key);
  } else if (key == "augment.min_abs_integral") {
    augment.min_abs_integral = parse_config_double(value, key);
  } else if (key == "augment.literal_blend") {
    augment.literal_blend_orientation = parse_bool(value, key);
  } else if (key == "crf.sigma2_im") {
    crf_sigma2_im = parse_config_double(value, key);
  } else if (key == "crf.f_w_floor") {
    crf_f_w_floor = parse_config_double(value, key);
  } else if (key == "conv.kernel") {
    kernel = value;
  } else if (key == "conv.sigma") {
    kernel_sigma = parse_config_double(value, key);
  } else if (key == "conv.kernel_file") {
    kernel_file = value;
  } else if (key == "output.rate") {
    schedule.kind = OutputSchedule::Kind::FixedRate;
    schedule.rate_hz = parse_config_double(value, key);
  } else if (key == "output.per_event") {
    if (parse_bool(value, key)) schedule.kind = OutputSchedule::Kind::PerEvent;
  } else if (key == "output.times") {
    schedule.kind = OutputSchedule::Kind::ExplicitTimes;
    schedule.times_micros.clear();
    std::string item;
    std::istringstream ss(value);
    while (std::getline(ss, item, ',')) {
      schedule.times_micros.push_back(parse_decimal_seconds(item));
    }
  } else if (key == "output.normalize") {
    if (value == "fixed") {
      normalization = OutputNormalization::FixedRange;
    } else if (value == "percentile") {
      normalization = OutputNormalization::Percentile;
    } else {
      throw DataError("config: output.normalize must be fixed|percentile");
    }
  } else if (key == "output.bit_depth") {
    output_bit_depth = static_cast<int>(parse_config_double(value, key));
  } else if (key == "io.polarity") {
    if (value == "01") {
      polarity = PolarityConvention::ZeroOne;
    } else if (value == "pm") {
      polarity = PolarityConvention::PlusMinus;
    } else {
      throw DataError("config: io.polarity must be 01|pm");
    }
  } else if (key == "run.i0") {
    I_0 = parse_config_double(value, key);
  } else if (key == "run.auto_ct") {
    auto_ct = parse_bool(value, key);
  } else {
    throw DataError("config: unknown key '" + key + "'");
  }
}

void RunConfig::load_file(const fs::path& path) {
  for (const auto& [key, value] : read_kv_file(path)) {
    set_key(key, value);
  }
}

std::string RunConfig::documented_keys() {
  return "filter.mode=cf|akf|highpass         filter mode\n"
         "filter.alpha=<rad/s>                CF gain / high-pass corner (15-30 typical)\n"
         "filter.c=<log units>                global contrast threshold\n"
         "filter.p_init=<var>                 initial state covariance\n"
         "filter.l_init=<log units>           initial log intensity\n"
         "filter.reference_at_interval_start=0|1  freeze L^A at interval start\n"
         "filter.scale_event_jumps=0|1        apply ct calibration to event jumps\n"
         "noise.sigma2_proc=<var/s>           process noise rate\n"
         "noise.sigma2_iso=<var/s>            isolated-pixel noise rate\n"
         "noise.sigma2_ref=<var>              refractory noise variance\n"
         "noise.rho_bar=<s>                   refractory upper bound\n"
         "noise.neighborhood_radius=<px>      isolation neighborhood radius\n"
         "augment.mode=full|zoh               frame augmentation mode\n"
         "augment.ct_lo / augment.ct_hi       ct scaling clamp range\n"
         "augment.min_abs_integral=<log>      calibration denominator floor\n"
         "augment.literal_blend=0|1           paper-literal blend orientation\n"
         "crf.sigma2_im=<var>                 image noise scale (default from profile)\n"
         "crf.f_w_floor=<w>                   weighting floor (covariance cap)\n"
         "conv.kernel=identity|gaussian|sobelx|sobely|laplacian|gradient|custom\n"
         "conv.sigma=<px>                     gaussian kernel sigma\n"
         "conv.kernel_file=<path>             custom kernel taps\n"
         "output.rate=<hz>                    fixed-rate output schedule\n"
         "output.per_event=0|1                one output per event\n"
         "output.times=<s,s,...>              explicit output timestamps\n"
         "output.normalize=fixed|percentile   intensity normalization\n"
         "output.bit_depth=8|16               output image depth\n"
         "io.polarity=01|pm                   event file polarity convention\n"
         "run.i0=<intensity>                  log-domain intensity offset\n"
         "run.auto_ct=0|1                     estimate c from the data before running\n";
}

}  // namespace evfuse::io
