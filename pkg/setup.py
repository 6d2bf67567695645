#!/usr/bin/env python3
"""
laserctl Setup Script
This script prepares the data and output directories and caches a calibrated
surface for every surface variant.
"""

import os
import sys

# Add the current directory to Python path
sys.path.insert(0, os.path.dirname(os.path.abspath(__file__)))

from laserctl import create_toolkit
from laserctl.errors import CalibrationError
from laserctl.models import SurfaceVariant
from laserctl.surfaces import calibrate
from laserctl.utils import load_cached_surface, save_cached_surface


def prepare_directories(toolkit):
    """Create the data and output directories"""
    for key in ('DATA_DIR', 'OUTPUT_DIR'):
        path = toolkit.config[key]
        os.makedirs(path, exist_ok=True)
        print(f"✓ {key.lower()} ready: {path}")


def calibrate_surfaces(toolkit):
    """Calibrate and cache each surface variant that is not cached yet"""
    failures = []
    for variant in SurfaceVariant:
        path = os.path.join(toolkit.config['DATA_DIR'], f'surface_{variant.value}.json')
        if load_cached_surface(path) is not None:
            print(f"⚠ {variant.value} surface already cached, skipping...")
            continue
        print(f"Calibrating {variant.value} surface...")
        try:
            surface, report = calibrate(variant)
        except CalibrationError as e:
            print(f"❌ {variant.value}: {str(e)}")
            failures.append(variant.value)
            continue
        save_cached_surface(path, surface.to_record())
        print(f"✓ {variant.value}: splitting {report.splitting_ev:.3e} eV, "
              f"tunneling time {report.tunneling_time_ps:.1f} ps")
    return failures


def main():
    """Main setup function"""
    print("🚀 laserctl Setup Script")
    print("=" * 50)

    try:
        toolkit = create_toolkit(os.environ.get('LASERCTL_ENV', 'development'))
        prepare_directories(toolkit)
        failures = calibrate_surfaces(toolkit)
        if failures:
            print(f"\n❌ Calibration failed for: {', '.join(failures)}")
            sys.exit(1)
        print("\n🎉 Setup completed successfully!")
        print("\nNext steps:")
        print("  python -m laserctl eigen --variant qcisd")
        print("  python -m laserctl run configs/fstirap_localize.ini")

    except Exception as e:
        print(f"❌ Setup failed: {str(e)}")
        sys.exit(1)


if __name__ == '__main__':
    main()
