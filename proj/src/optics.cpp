#include "optistack/optics.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "optistack/errors.hpp"

namespace optistack::optics {

Material Material::constant(int id, std::string name, Complex n) {
  Material m;
  m.id = id;
  m.name = std::move(name);
  m.constant_index = n;
  return m;
}

Material Material::tabulated(int id, std::string name, std::vector<DispersionSample> table) {
  Material m;
  m.id = id;
  m.name = std::move(name);
  m.dispersion = std::move(table);
  return m;
}

namespace {

void check_index(const Material& m, Complex n) {
  if (!(n.real() > 0.0) || !(n.imag() >= 0.0)) {
    throw ConfigError("material '" + m.name + "': index must have Re(n) > 0 and Im(n) >= 0");
  }
}

}  // namespace

void Material::validate() const {
  if (constant_index) {
    check_index(*this, *constant_index);
    return;
  }
  if (dispersion.empty()) {
    throw ConfigError("material '" + name + "' has neither a constant index nor a dispersion table");
  }
  for (std::size_t i = 0; i < dispersion.size(); ++i) {
    check_index(*this, dispersion[i].index);
    if (!(dispersion[i].wavelength_nm > 0.0)) {
      throw ConfigError("material '" + name + "': dispersion wavelengths must be positive");
    }
    if (i > 0 && !(dispersion[i].wavelength_nm > dispersion[i - 1].wavelength_nm)) {
      throw ConfigError("material '" + name + "': dispersion wavelengths must increase strictly");
    }
  }
}

Complex refractive_index(const Material& material, double wavelength_nm) {
  if (!(wavelength_nm > 0.0)) {
    throw InvalidInputError("wavelength must be positive");
  }
  if (material.constant_index) {
    return *material.constant_index;
  }
  const auto& table = material.dispersion;
  if (table.empty()) {
    throw ConfigError("material '" + material.name + "' has an empty dispersion table");
  }
  if (wavelength_nm <= table.front().wavelength_nm) return table.front().index;
  if (wavelength_nm >= table.back().wavelength_nm) return table.back().index;

  auto hi = std::upper_bound(table.begin(), table.end(), wavelength_nm,
                             [](double wl, const DispersionSample& s) { return wl < s.wavelength_nm; });
  auto lo = hi - 1;
  const double w = (wavelength_nm - lo->wavelength_nm) / (hi->wavelength_nm - lo->wavelength_nm);
  return {lo->index.real() + w * (hi->index.real() - lo->index.real()),
          lo->index.imag() + w * (hi->index.imag() - lo->index.imag())};
}

const Material& MaterialCatalog::by_id(int id) const {
  for (const auto& m : materials) {
    if (m.id == id) return m;
  }
  throw InvalidInputError("unknown material id " + std::to_string(id));
}

bool MaterialCatalog::contains(int id) const {
  return std::any_of(materials.begin(), materials.end(), [id](const Material& m) { return m.id == id; });
}

double MaterialCatalog::reference_index(int id) const {
  return refractive_index(by_id(id), reference_wavelength_nm).real();
}

void MaterialCatalog::validate() const {
  if (materials.size() < 2) {
    throw ConfigError("a material catalog needs at least two materials");
  }
  if (!(reference_wavelength_nm > 0.0)) {
    throw ConfigError("catalog reference wavelength must be positive");
  }
  std::vector<int> ids;
  for (const auto& m : materials) {
    m.validate();
    ids.push_back(m.id);
  }
  std::sort(ids.begin(), ids.end());
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (ids[i] != static_cast<int>(i) + 1) {
      throw ConfigError("material ids must be unique and contiguous from 1");
    }
  }
}

MaterialCatalog default_catalog() {
  MaterialCatalog c;
  c.materials = {
      Material::constant(1, "material-1", {1.457, 0.0}),
      Material::constant(2, "material-2", {1.645, 0.0}),
      Material::constant(3, "material-3", {1.860, 0.0}),
      Material::constant(4, "material-4", {2.327, 0.0}),
  };
  c.reference_wavelength_nm = 550.0;
  return c;
}

namespace {

std::vector<double> inclusive_range(double start, double end, double step) {
  if (step <= 0.0 || end <= start) return {start};
  const auto count = static_cast<std::size_t>(std::floor((end - start) / step + 1e-9)) + 1;
  std::vector<double> out(count);
  for (std::size_t i = 0; i < count; ++i) out[i] = start + static_cast<double>(i) * step;
  return out;
}

}  // namespace

SpectralGrid SpectralGrid::from_ranges(double wl_start, double wl_end, double wl_step, double angle_start,
                                       double angle_end, double angle_step) {
  SpectralGrid g;
  g.wavelengths_nm = inclusive_range(wl_start, wl_end, wl_step);
  g.angles_deg = inclusive_range(angle_start, angle_end, angle_step);
  g.validate();
  return g;
}

void SpectralGrid::validate() const {
  if (wavelengths_nm.empty() || angles_deg.empty()) {
    throw ConfigError("spectral grid must contain at least one wavelength and one angle");
  }
  for (double wl : wavelengths_nm) {
    if (!(wl > 0.0)) throw ConfigError("grid wavelengths must be positive");
  }
  for (double a : angles_deg) {
    if (!(a >= 0.0 && a < 90.0)) throw ConfigError("grid angles must lie in [0, 90)");
  }
}

double Stack::total_thickness() const {
  double sum = 0.0;
  for (const auto& l : layers) sum += l.thickness_nm;
  return sum;
}

namespace {

// Normal component n*cos(theta) inside a medium, on the decaying branch.
Complex normal_component(Complex n, Complex transverse) {
  Complex q = std::sqrt(n * n - transverse * transverse);
  if (q.imag() < 0.0 || (q.imag() == 0.0 && q.real() < 0.0)) q = -q;
  if (q == Complex{0.0, 0.0}) q = Complex{0.0, 1e-300};
  return q;
}

// Tilted optical admittance in units of the free-space admittance.
Complex admittance(Complex n, Complex q, Polarization pol) {
  return pol == Polarization::S ? q : n * n / q;
}

}  // namespace

double reflectance(std::span<const Film> films, Complex ambient, Complex substrate, double wavelength_nm,
                   double angle_deg, Polarization pol) {
  const double theta = angle_deg * std::numbers::pi / 180.0;
  // n0 sin(theta0) is conserved across all interfaces.
  const Complex transverse = ambient * std::sin(theta);
  const Complex q0 = normal_component(ambient, transverse);
  const Complex qs = normal_component(substrate, transverse);
  const Complex eta0 = admittance(ambient, q0, pol);
  const Complex etas = admittance(substrate, qs, pol);

  // [B; C] = prod_j M_j * [1; eta_s]
  Complex m11{1.0, 0.0}, m12{0.0, 0.0}, m21{0.0, 0.0}, m22{1.0, 0.0};
  const Complex i{0.0, 1.0};
  const double k0 = 2.0 * std::numbers::pi / wavelength_nm;
  for (const Film& f : films) {
    const Complex q = normal_component(f.index, transverse);
    const Complex eta = admittance(f.index, q, pol);
    const Complex delta = k0 * q * f.thickness_nm;
    const Complex c = std::cos(delta);
    const Complex s = std::sin(delta);
    const Complex a11 = c, a12 = -i * s / eta, a21 = -i * eta * s, a22 = c;
    const Complex n11 = m11 * a11 + m12 * a21;
    const Complex n12 = m11 * a12 + m12 * a22;
    const Complex n21 = m21 * a11 + m22 * a21;
    const Complex n22 = m21 * a12 + m22 * a22;
    m11 = n11;
    m12 = n12;
    m21 = n21;
    m22 = n22;
  }
  const Complex b = m11 + m12 * etas;
  const Complex c = m21 + m22 * etas;
  const Complex r = (eta0 * b - c) / (eta0 * b + c);
  return std::clamp(std::norm(r), 0.0, 1.0);
}

namespace {

std::vector<Film> resolve(const Stack& stack, const MaterialCatalog& catalog, double wavelength_nm) {
  std::vector<Film> films;
  films.reserve(stack.layers.size());
  for (const auto& l : stack.layers) {
    films.push_back({refractive_index(catalog.by_id(l.material_id), wavelength_nm), l.thickness_nm});
  }
  return films;
}

}  // namespace

double reflectivity(const Stack& stack, const MaterialCatalog& catalog, double wavelength_nm, double angle_deg,
                    Polarization pol) {
  const auto films = resolve(stack, catalog, wavelength_nm);
  return reflectance(films, stack.ambient_index, stack.substrate_index, wavelength_nm, angle_deg, pol);
}

std::vector<double> reflectivity_vector(const Stack& stack, const MaterialCatalog& catalog,
                                        const SpectralGrid& grid) {
  std::vector<double> out;
  out.reserve(grid.size());
  std::vector<std::vector<Film>> by_wavelength;
  by_wavelength.reserve(grid.wavelengths_nm.size());
  for (double wl : grid.wavelengths_nm) by_wavelength.push_back(resolve(stack, catalog, wl));

  for (double angle : grid.angles_deg) {
    for (std::size_t w = 0; w < grid.wavelengths_nm.size(); ++w) {
      const double wl = grid.wavelengths_nm[w];
      const auto& films = by_wavelength[w];
      const double rs =
          reflectance(films, stack.ambient_index, stack.substrate_index, wl, angle, Polarization::S);
      const double rp =
          angle == 0.0 ? rs
                       : reflectance(films, stack.ambient_index, stack.substrate_index, wl, angle, Polarization::P);
      out.push_back(0.5 * (rs + rp));
    }
  }
  return out;
}

std::vector<Film> DbrSpec::films() const {
  std::vector<Film> out;
  out.reserve(2 * static_cast<std::size_t>(periods));
  for (int p = 0; p < periods; ++p) {
    out.push_back({{n_low, 0.0}, t_low_nm});
    out.push_back({{n_high, 0.0}, t_high_nm});
  }
  return out;
}

Stack DbrSpec::as_stack(int low_material_id, int high_material_id) const {
  Stack s;
  for (int p = 0; p < periods; ++p) {
    s.layers.push_back({low_material_id, t_low_nm});
    s.layers.push_back({high_material_id, t_high_nm});
  }
  return s;
}

DbrSpec design_dbr(double n_low, double n_high, double band_edge_nm, int periods) {
  if (!(n_low > 0.0) || !(n_low < n_high)) {
    throw InvalidInputError("design_dbr requires 0 < n1 < n2");
  }
  if (!(band_edge_nm > 0.0) || periods < 1) {
    throw InvalidInputError("design_dbr requires a positive band edge and at least one period");
  }
  DbrSpec d;
  d.n_low = n_low;
  d.n_high = n_high;
  d.band_edge_nm = band_edge_nm;
  d.periods = periods;
  // width = k * center with k = (4/pi) asin|(n2-n1)/(n2+n1)|; center (1 + k) = edge.
  const double k = 4.0 / std::numbers::pi * std::asin(std::abs((n_high - n_low) / (n_high + n_low)));
  d.center_nm = band_edge_nm / (1.0 + k);
  d.stopband_width_nm = band_edge_nm - d.center_nm;
  d.t_low_nm = d.center_nm / (4.0 * n_low);
  d.t_high_nm = d.center_nm / (4.0 * n_high);
  return d;
}

}  // namespace optistack::optics
