"""Drug-combination recommendation from patient histories, ELF volumes and
substructure masks."""

__version__ = "0.1.0"
