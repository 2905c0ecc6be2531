#pragma once

// Forward simulation of planar multilayer coatings with the characteristic
// (Abeles) matrix method, plus the quarter-wave Bragg reflector designer.
//
// Conventions: complex index n + ik with k >= 0 absorbing, time dependence
// exp(-i w t). Thicknesses and wavelengths are in nanometres, angles in
// degrees measured from the normal inside the ambient medium.

#include <complex>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace optistack::optics {

using Complex = std::complex<double>;

struct DispersionSample {
  double wavelength_nm;
  Complex index;
};

struct Material {
  int id = 0;
  std::string name;
  // Exactly one of the two is used: a constant index, or a table sorted by
  // strictly increasing wavelength.
  std::optional<Complex> constant_index;
  std::vector<DispersionSample> dispersion;

  static Material constant(int id, std::string name, Complex n);
  static Material tabulated(int id, std::string name, std::vector<DispersionSample> table);

  // Throws ConfigError when the invariants of a material are violated.
  void validate() const;
};

// Constant materials return their index; tabulated ones interpolate real and
// imaginary parts linearly and clamp outside the table.
Complex refractive_index(const Material& material, double wavelength_nm);

struct MaterialCatalog {
  std::vector<Material> materials;
  double reference_wavelength_nm = 550.0;

  const Material& by_id(int id) const;
  bool contains(int id) const;
  // Real part of the index at the reference wavelength; used for state
  // encodings and optical path lengths.
  double reference_index(int id) const;
  void validate() const;
};

// Silica-like to titania-like ladder: 1.457, 1.645, 1.860, 2.327.
MaterialCatalog default_catalog();

struct SpectralGrid {
  std::vector<double> wavelengths_nm;
  std::vector<double> angles_deg;

  // Inclusive ranges; a zero step or equal endpoints yields a single point.
  static SpectralGrid from_ranges(double wl_start, double wl_end, double wl_step,
                                  double angle_start, double angle_end, double angle_step);

  std::size_t size() const { return wavelengths_nm.size() * angles_deg.size(); }
  void validate() const;
};

struct Layer {
  int material_id = 0;
  double thickness_nm = 0.0;
  bool operator==(const Layer&) const = default;
};

struct Stack {
  std::vector<Layer> layers;
  Complex ambient_index{1.0, 0.0};
  Complex substrate_index{1.0, 0.0};

  double total_thickness() const;
};

// A layer with its index already resolved at the wavelength of interest.
struct Film {
  Complex index;
  double thickness_nm;
};

enum class Polarization { S, P };

// Power reflectance of a film sequence between semi-infinite ambient (light
// enters here) and substrate.
double reflectance(std::span<const Film> films, Complex ambient, Complex substrate,
                   double wavelength_nm, double angle_deg, Polarization pol);

double reflectivity(const Stack& stack, const MaterialCatalog& catalog, double wavelength_nm,
                    double angle_deg, Polarization pol);

// Unpolarized reflectance (mean of s and p) over the grid; angles form the
// outer loop and wavelengths the inner loop.
std::vector<double> reflectivity_vector(const Stack& stack, const MaterialCatalog& catalog,
                                        const SpectralGrid& grid);

struct DbrSpec {
  double n_low = 0.0;
  double n_high = 0.0;
  double band_edge_nm = 0.0;
  double center_nm = 0.0;
  double stopband_width_nm = 0.0;
  double t_low_nm = 0.0;
  double t_high_nm = 0.0;
  int periods = 0;

  double total_thickness() const { return periods * (t_low_nm + t_high_nm); }
  // (low, high) pairs repeated `periods` times, low-index layer first.
  std::vector<Film> films() const;
  Stack as_stack(int low_material_id, int high_material_id) const;
};

// Quarter-wave reflector whose first-order stopband ends at `band_edge_nm`.
// Solves center + width = band_edge with
// width = (4/pi) * center * asin|(n2 - n1)/(n2 + n1)|.
DbrSpec design_dbr(double n_low, double n_high, double band_edge_nm, int periods);

}  // namespace optistack::optics
