/* Heap source of 100 wide chars concatenated onto a 50-wide-char stack buffer. */
#include <stdlib.h>
#include <wchar.h>

#include "io.h"

static void bad(void)
{
    wchar_t * data;
    data = NULL;
    if (5==5)
    {
        data = (wchar_t *)malloc(100*sizeof(wchar_t));
        if (data == NULL) {exit(-1);}
        wmemset(data, L'A', 100-1);
        data[100-1] = L'\0';
    }
    {
        wchar_t dest[50] = L"";
        wcscat(dest, data);
        printWLine(data);
        free(data);
    }
}

int main(void)
{
    printLine("Calling bad()...");
    bad();
    printLine("Finished bad()");
    return 0;
}
