"""Rectified point flow for multi-part point cloud assembly."""
