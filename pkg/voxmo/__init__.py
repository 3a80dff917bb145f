"""Graph-based motion-compensated coding of voxelized point cloud sequences."""
