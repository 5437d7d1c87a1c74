"""Phase congruency via log-Gabor filter banks.

Frequency-domain implementation with 4 scales x 4 orientations and the
parameter set of the reference feature-similarity implementation
(minWaveLength=6, mult=2, sigmaOnf=0.55, dThetaOnSigma=1.2, k=2.0). Noise
energy is estimated from the median response of the smallest-scale filter
and subtracted before normalizing by the local amplitude sum.
"""

from __future__ import annotations

import numpy as np


def lowpass_filter(shape: tuple[int, int], cutoff: float = 0.45, order: int = 15) -> np.ndarray:
    """Butterworth-style low-pass filter on the (unshifted) frequency grid."""
    if not 0 < cutoff <= 0.5:
        raise ValueError("cutoff must lie in (0, 0.5]")
    rows, cols = shape
    xr = _freq_range(cols)
    yr = _freq_range(rows)
    x, y = np.meshgrid(xr, yr)
    radius = np.fft.ifftshift(np.sqrt(x * x + y * y))
    return 1.0 / (1.0 + (radius / cutoff) ** (2 * order))


def _freq_range(n: int) -> np.ndarray:
    if n % 2:
        return np.arange(-(n - 1) / 2, (n - 1) / 2 + 1) / (n - 1)
    return np.arange(-n / 2, n / 2) / n


def phase_congruency(img: np.ndarray, nscale: int = 4, norient: int = 4,
                     min_wavelength: float = 6.0, mult: float = 2.0,
                     sigma_on_f: float = 0.55, d_theta_on_sigma: float = 1.2,
                     k: float = 2.0, epsilon: float = 1e-4) -> np.ndarray:
    """Phase congruency map of a 2D image, summed over orientations."""
    img = np.asarray(img, dtype=np.float64)
    if img.ndim != 2:
        raise ValueError(f"expected a 2D image, got shape {img.shape}")
    rows, cols = img.shape
    image_fft = np.fft.fft2(img)

    x, y = np.meshgrid(_freq_range(cols), _freq_range(rows))
    radius = np.fft.ifftshift(np.sqrt(x * x + y * y))
    theta = np.fft.ifftshift(np.arctan2(-y, x))
    radius[0, 0] = 1.0  # avoid log(0) at DC; the DC gain is zeroed below
    sintheta, costheta = np.sin(theta), np.cos(theta)

    lp = lowpass_filter((rows, cols), 0.45, 15)
    log_gabor = []
    for s in range(nscale):
        wavelength = min_wavelength * mult ** s
        f0 = 1.0 / wavelength
        lg = np.exp(-(np.log(radius / f0)) ** 2 / (2.0 * np.log(sigma_on_f) ** 2))
        lg *= lp
        lg[0, 0] = 0.0
        log_gabor.append(lg)

    theta_sigma = np.pi / norient / d_theta_on_sigma
    energy_all = np.zeros((rows, cols))
    an_all = np.zeros((rows, cols))

    for o in range(norient):
        angl = o * np.pi / norient
        ds = sintheta * np.cos(angl) - costheta * np.sin(angl)
        dc = costheta * np.cos(angl) + sintheta * np.sin(angl)
        dtheta = np.abs(np.arctan2(ds, dc))
        spread = np.exp(-dtheta ** 2 / (2.0 * theta_sigma ** 2))

        sum_e = np.zeros((rows, cols))
        sum_o = np.zeros((rows, cols))
        sum_an = np.zeros((rows, cols))
        eo = []
        ifft_filters = []
        em_n = 0.0
        for s in range(nscale):
            filt = log_gabor[s] * spread
            ifft_filters.append(np.real(np.fft.ifft2(filt)) * np.sqrt(rows * cols))
            response = np.fft.ifft2(image_fft * filt)
            eo.append(response)
            an = np.abs(response)
            sum_an += an
            sum_e += np.real(response)
            sum_o += np.imag(response)
            if s == 0:
                em_n = np.sum(filt ** 2)

        x_energy = np.sqrt(sum_e ** 2 + sum_o ** 2) + epsilon
        mean_e = sum_e / x_energy
        mean_o = sum_o / x_energy
        energy = np.zeros((rows, cols))
        for s in range(nscale):
            e, odd = np.real(eo[s]), np.imag(eo[s])
            energy += e * mean_e + odd * mean_o - np.abs(e * mean_o - odd * mean_e)

        # noise threshold from the smallest-scale response statistics
        median_e2n = np.median(np.abs(eo[0]) ** 2)
        mean_e2n = median_e2n / np.log(2.0)
        noise_power = mean_e2n / em_n if em_n > 0 else 0.0
        est_sum_an2 = np.zeros((rows, cols))
        for s in range(nscale):
            est_sum_an2 += ifft_filters[s] ** 2
        est_sum_ai_aj = np.zeros((rows, cols))
        for si in range(nscale - 1):
            for sj in range(si + 1, nscale):
                est_sum_ai_aj += ifft_filters[si] * ifft_filters[sj]
        est_noise_energy2 = (2.0 * noise_power * np.sum(est_sum_an2)
                             + 4.0 * noise_power * np.sum(est_sum_ai_aj))
        tau = np.sqrt(max(est_noise_energy2, 0.0) / 2.0)
        est_noise_energy = tau * np.sqrt(np.pi / 2.0)
        est_noise_sigma = np.sqrt((2.0 - np.pi / 2.0) * tau ** 2)
        threshold = (est_noise_energy + k * est_noise_sigma) / 1.7

        energy = np.maximum(energy - threshold, 0.0)
        energy_all += energy
        an_all += sum_an

    return energy_all / (an_all + epsilon)
