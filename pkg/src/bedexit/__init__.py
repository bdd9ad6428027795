"""Bed-exit recognition from passive RFID tag-read streams."""

__version__ = "0.1.0"
