"""
Registro y almacenamiento de resultados de las ejecuciones.
Guarda métricas en CSV, un resumen JSON y el manifiesto de la ejecución.

Ningún fichero lleva marcas de tiempo: dos ejecuciones con la misma configuración
producen salidas idénticas byte a byte.
"""
import csv
import json
import os
import platform

import numpy as np
import scipy
import sklearn

METRICS_HEADER = ['step', 'nfe', 'loss_vel', 'loss_con', 'loss_dsm', 'lambda_con',
                  'sw2', 'gfd', 'straightness', 'consistency_gap']
TRAIN_HEADER = ['step', 'loss_vel', 'loss_con', 'loss_dsm', 'lambda_con', 'total',
                'grad_norm', 'skipped']
TEACHER_HEADER = ['step', 'fm_loss']


def format_value(value):
    """Celda CSV: flotantes con ``repr`` (exactos), vacío para valores ausentes."""
    if value is None:
        return ''
    if isinstance(value, (float, np.floating)):
        return repr(float(value))
    if isinstance(value, (np.integer,)):
        return str(int(value))
    return str(value)


def library_versions():
    return {
        'python': platform.python_version(),
        'numpy': np.__version__,
        'scipy': scipy.__version__,
        'scikit-learn': sklearn.__version__,
    }


class RunLogger:
    """
    Registra las tablas y el resumen de una ejecución en su directorio de salida.
    """

    def __init__(self, out_dir, command):
        """
        Args:
            out_dir (str): Directorio de salida (se crea si no existe)
            command (str): Verbo que produjo la ejecución
        """
        self.out_dir = out_dir
        self.command = command
        self.files = []
        self.tables = {}

        if not os.path.exists(out_dir):
            os.makedirs(out_dir)
            print(f"✓ Directorio de salida creado: {out_dir}")

    def path(self, name):
        return os.path.join(self.out_dir, name)

    def register(self, name):
        if name not in self.files:
            self.files.append(name)
        return self.path(name)

    def log_row(self, table, header, row):
        """
        Añade una fila (diccionario) a una tabla en memoria.

        Args:
            table (str): Nombre del CSV
            header (list): Columnas de la tabla
            row (dict): Valores; las columnas ausentes quedan vacías
        """
        unknown = set(row) - set(header)
        if unknown:
            raise ValueError(f"Columnas desconocidas para {table}: {sorted(unknown)}")
        self.tables.setdefault(table, (header, []))[1].append(row)
        return row

    def rows(self, table):
        return self.tables.get(table, (None, []))[1]

    def write_table(self, table):
        """Escribe una tabla registrada en CSV."""
        header, rows = self.tables[table]
        with open(self.register(table), 'w', newline='', encoding='utf-8') as f:
            writer = csv.writer(f)
            writer.writerow(header)
            for row in rows:
                writer.writerow([format_value(row.get(column)) for column in header])
        return self.path(table)

    def write_all(self):
        return [self.write_table(table) for table in self.tables]

    def save_json(self, name, data):
        with open(self.register(name), 'w', encoding='utf-8') as f:
            json.dump(data, f, indent=2, ensure_ascii=False, sort_keys=True)
            f.write('\n')
        return self.path(name)

    def save_summary(self, summary):
        """
        Guarda el resumen de la ejecución en ``summary.json``.

        Args:
            summary (dict): Métricas finales e información adicional
        """
        path = self.save_json('summary.json', {'command': self.command, **summary})
        print(f"\n✓ Resumen guardado en: {path}")
        return path

    def write_manifest(self, config_hash, seed):
        """
        Manifiesto ``run_manifest.json``: comando, hash de la configuración, semilla,
        versiones de las bibliotecas y ficheros producidos.
        """
        manifest = {
            'command': self.command,
            'config_hash': config_hash,
            'seed': int(seed),
            'versions': library_versions(),
            'files': sorted(self.files),
        }
        with open(self.path('run_manifest.json'), 'w', encoding='utf-8') as f:
            json.dump(manifest, f, indent=2, sort_keys=True)
            f.write('\n')
        return manifest

    def print_table(self, table, columns=None):
        """Imprime una tabla registrada en consola."""
        header, rows = self.tables.get(table, (None, []))
        if not rows:
            print(f"\nNo hay filas registradas en {table}.")
            return
        columns = columns or header
        print("\n" + "=" * 70)
        print(f"RESULTADOS: {table}")
        print("=" * 70)
        print(" ".join(f"{c:<12}" for c in columns))
        print("-" * 70)
        for row in rows:
            cells = []
            for column in columns:
                value = row.get(column)
                cells.append(f"{value:<12.4g}" if isinstance(value, float) else f"{format_value(value):<12}")
            print(" ".join(cells))
        print("=" * 70)


def load_summary(json_file):
    """
    Carga un resumen guardado.

    Returns:
        dict: Datos del resumen, o None si no se pudo leer
    """
    try:
        with open(json_file, 'r', encoding='utf-8') as f:
            return json.load(f)
    except FileNotFoundError:
        print(f"Error: No se encontró el archivo {json_file}")
        return None
    except json.JSONDecodeError:
        print(f"Error: El archivo {json_file} no es un JSON válido")
        return None


def read_csv(path):
    """Lee un CSV producido por ``RunLogger`` como lista de diccionarios de cadenas."""
    with open(path, 'r', newline='', encoding='utf-8') as f:
        return list(csv.DictReader(f))
